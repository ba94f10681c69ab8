//! Periodic-coefficient analysis: DC averages of dynamic eigenvalues, the monodromy matrix
//! and periodicity verdicts.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::coeffexpr::EvalError;
use crate::family::{phase_accumulator, FamilyError};
use crate::numerics::{chordal, cumulative_integral, eig2, interpolate, interpolate_complex, interpolate_with_derivative};
use crate::odeengine::{integrate_system, OdeError, StateField, Tolerance};
use crate::primitive::{IntrinsicKind, PrimitivePair};
use crate::reduction::ReducedRCE;
use crate::timedomain::sigma_integral;

/// Relative sup-norm tolerance for periodicity verdicts.
pub const PERIODICITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FloquetError {
    #[error("window of length {span} is shorter than the required {needed}")]
    WindowTooShort { span: f64, needed: f64 },
    #[error("coefficient {coefficient} is not periodic: deviation {deviation:.3e} at t = {t}")]
    NotPeriodic { coefficient: &'static str, t: f64, deviation: f64 },
    #[error("attractor has not settled: period-to-period deviation {deviation:.3e}")]
    TransientNotDecayed { deviation: f64 },
    #[error("period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

fn check_span(times: &[f64], needed: f64) -> Result<(), FloquetError> {
    let span = times[times.len() - 1] - times[0];
    if span < needed * (1.0 - 1e-12) {
        return Err(FloquetError::WindowTooShort { span, needed });
    }
    Ok(())
}

/// Mean of `f` over the last complete period of the grid.
pub fn dc_average(times: &[f64], f: &[f64], period: f64) -> Result<f64, FloquetError> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(FloquetError::BadPeriod(period));
    }
    check_span(times, period)?;
    let big = cumulative_integral(times, f);
    let end = times.len() - 1;
    let start = interpolate_with_derivative(times, &big, f, times[end] - period);
    Ok((big[end] - start) / period)
}

/// Largest relative deviation `|c(t + T) − c(t)|` over one period for every coefficient of `r`.
pub fn check_coefficients_periodic(r: &ReducedRCE, t0: f64, period: f64) -> Result<f64, FloquetError> {
    let named = [("omega01", &r.omega01), ("omega02", &r.omega02), ("sigma0", &r.sigma0), ("alpha", &r.alpha)];
    let mut worst: f64 = 0.0;
    for k in 0..64 {
        let t = t0 + period * (k as f64 + 0.37) / 64.0;
        for (name, c) in named {
            let (a, b) = (c.value(t)?, c.value(t + period)?);
            let d = (a - b).abs() / (1.0 + a.abs());
            if d > 1e-9 {
                return Err(FloquetError::NotPeriodic { coefficient: name, t, deviation: d });
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// `Φ(t₀ + T)` for `Φ(t₀) = I`, from direct integration of the state equation.
pub fn monodromy(r: &ReducedRCE, t0: f64, period: f64) -> Result<[[f64; 2]; 2], FloquetError> {
    let out = integrate_system(&StateField(r.state_matrix()), [1.0, 0.0, 0.0, 1.0], &[t0, t0 + period], Tolerance::new(1e-12, 1e-14))?;
    let y = out[1];
    Ok([[y[0], y[2]], [y[1], y[3]]])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicityVerdict {
    pub periodic: bool,
    pub deviation: f64,
    pub tolerance: f64,
    /// Largest change of escape-event offsets between the last two periods, as a fraction of `T`.
    pub event_offset_deviation: Option<f64>,
}

/// Compares the last full period of a sampled solution with the one before it. Samples
/// within two local grid steps of an event, in either period, are skipped.
pub fn check_rce_periodicity(times: &[f64], values: &[Complex64], events: &[f64], period: f64) -> Result<PeriodicityVerdict, FloquetError> {
    check_span(times, 2.0 * period)?;
    let n = times.len();
    let t_end = times[n - 1];
    let step = (t_end - times[0]) / (n - 1) as f64;
    let near_event = |t: f64| events.iter().any(|e| (t - e).abs() < 2.0 * step);
    let mut deviation: f64 = 0.0;
    for i in (0..n).rev() {
        let t = times[i];
        if t < t_end - period {
            break;
        }
        if near_event(t) || near_event(t - period) {
            continue;
        }
        let prev = interpolate_complex(times, values, t - period);
        deviation = deviation.max(chordal(values[i], prev));
    }
    let last: Vec<f64> = events.iter().map(|e| e - (t_end - period)).filter(|o| *o >= 0.0).collect();
    let before: Vec<f64> = events
        .iter()
        .map(|e| e - (t_end - 2.0 * period))
        .filter(|o| *o >= 0.0 && *o < period)
        .collect();
    let event_offset_deviation = if last.is_empty() && before.is_empty() {
        None
    } else if last.len() != before.len() {
        Some(1.0)
    } else {
        Some(last.iter().zip(&before).map(|(a, b)| (a - b).abs() / period).fold(0.0, f64::max))
    };
    let periodic = deviation <= PERIODICITY_TOL && event_offset_deviation.is_none_or(|d| d <= PERIODICITY_TOL);
    Ok(PeriodicityVerdict { periodic, deviation, tolerance: PERIODICITY_TOL, event_offset_deviation })
}

pub fn check_rce_periodicity_real(times: &[f64], nu: &[f64], events: &[f64], period: f64) -> Result<PeriodicityVerdict, FloquetError> {
    let values: Vec<Complex64> = nu.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    check_rce_periodicity(times, &values, events, period)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentSource {
    /// Period averages of the dynamic eigenvalues of the primitive pair.
    DcAverage,
    /// Principal logarithms of the multipliers (used when the pair has poles).
    Monodromy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloquetResult {
    pub period: f64,
    /// Start of the period over which averages and the monodromy are taken.
    pub t0: f64,
    pub r1: Complex64,
    pub r2: Complex64,
    pub exponent_source: ExponentSource,
    pub monodromy: [[f64; 2]; 2],
    /// Eigenvalues of the monodromy, ordered to match `r1`, `r2`.
    pub multipliers: [Complex64; 2],
    pub multiplier_product: f64,
    /// `e^{∫tr A}` over one period.
    pub abel_product: f64,
    pub product_deviation: f64,
    /// `| |e^{r_k T}| − |μ_k| | / |μ_k|`.
    pub modulus_mismatch: [f64; 2],
    /// `arg(e^{r_k T}/μ_k)`.
    pub phase_offset: [f64; 2],
    /// Set when an exponent and its multiplier differ in phase by about `π`, i.e. the
    /// exponents need the `±jπ/T` augmentation to reproduce the monodromy.
    pub pi_flag: bool,
    /// DC average of `ν_R` over the same period.
    pub nu_r_dc: f64,
    pub q_periodic: Option<PeriodicityVerdict>,
    pub rce_periodic: Option<PeriodicityVerdict>,
}

impl FloquetResult {
    /// Growth rate of the time-domain solutions.
    pub fn growth_rate(&self) -> f64 {
        self.r1.re.max(self.r2.re)
    }

    pub fn bounded(&self) -> bool {
        self.multipliers.iter().all(|m| m.norm() <= 1.0 + 1e-6)
    }
}

fn pairing(r: [Complex64; 2], mu: [Complex64; 2], period: f64) -> [Complex64; 2] {
    let e = |z: Complex64| (z * period).exp();
    let straight = (e(r[0]) - mu[0]).norm() + (e(r[1]) - mu[1]).norm();
    let swapped = (e(r[0]) - mu[1]).norm() + (e(r[1]) - mu[0]).norm();
    if swapped < straight {
        [mu[1], mu[0]]
    } else {
        mu
    }
}

/// Floquet exponents from DC averages of the primitive dynamic eigenvalues, cross-checked
/// against the monodromy from direct state integration over the last complete period.
pub fn floquet_exponents(r: &ReducedRCE, pair: &PrimitivePair, period: f64) -> Result<FloquetResult, FloquetError> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(FloquetError::BadPeriod(period));
    }
    let t = pair.times();
    check_span(t, period)?;
    let t_end = t[t.len() - 1];
    let t0 = t_end - period;
    check_coefficients_periodic(r, t0, period)?;
    let m = monodromy(r, t0, period)?;
    let mu = eig2(&m);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let s = sigma_integral(r, &pair.grid, t0)?;
    let abel = (2.0 * s[s.len() - 1]).exp();

    let mut w1 = Vec::with_capacity(t.len());
    let mut sigma = Vec::with_capacity(t.len());
    for ti in t {
        w1.push(r.omega01.value(*ti)?);
        sigma.push(r.sigma0.value(*ti)?);
    }
    let regular = !pair.has_poles() && pair.nu_r.iter().chain(&pair.nu_i).all(|v| v.is_finite());
    let nu_r_dc = if regular { dc_average(t, &pair.nu_r, period)? } else { f64::NAN };
    let (rs, source) = if regular {
        let base: Vec<f64> = (0..t.len()).map(|i| sigma[i] + w1[i] * pair.nu_r[i]).collect();
        let spread: Vec<f64> = (0..t.len()).map(|i| w1[i] * pair.nu_i[i]).collect();
        let (b, d) = (dc_average(t, &base, period)?, dc_average(t, &spread, period)?);
        let rs = match pair.kind {
            IntrinsicKind::Real => [Complex64::new(b + d, 0.0), Complex64::new(b - d, 0.0)],
            IntrinsicKind::Imaginary => [Complex64::new(b, d), Complex64::new(b, -d)],
        };
        (rs, ExponentSource::DcAverage)
    } else {
        let mut rs = [mu[0].ln() / period, mu[1].ln() / period];
        if rs[1].re > rs[0].re {
            rs.swap(0, 1);
        }
        (rs, ExponentSource::Monodromy)
    };
    let mu = pairing(rs, mu, period);
    let mut modulus_mismatch = [0.0; 2];
    let mut phase_offset = [0.0; 2];
    for k in 0..2 {
        let e = (rs[k] * period).exp();
        modulus_mismatch[k] = (e.norm() - mu[k].norm()).abs() / mu[k].norm();
        phase_offset[k] = (e / mu[k]).arg();
    }
    let pi_flag = phase_offset.iter().any(|p| p.abs() > 0.5 * std::f64::consts::PI);

    let rce_periodic = if t_end - t[0] >= 2.0 * period {
        let plus = pair.plus_values();
        Some(check_rce_periodicity(t, &plus, &pair.poles, period)?)
    } else {
        None
    };
    let q_periodic = if regular && pair.kind == IntrinsicKind::Real && t_end - t[0] >= 2.0 * period {
        Some(q_periodicity(r, pair, [rs[0].re, rs[1].re], period)?)
    } else {
        None
    };
    Ok(FloquetResult {
        period,
        t0,
        r1: rs[0],
        r2: rs[1],
        exponent_source: source,
        monodromy: m,
        multipliers: mu,
        multiplier_product: det,
        abel_product: abel,
        product_deviation: (det - abel).abs() / abel,
        modulus_mismatch,
        phase_offset,
        pi_flag,
        nu_r_dc,
        q_periodic,
        rce_periodic,
    })
}

/// Periodicity of `Q(t) = Φ(t)·e^{−R(t − t₀)}` for a pole-free real pair, with `Φ` built
/// from the primitive columns.
fn q_periodicity(r: &ReducedRCE, pair: &PrimitivePair, rs: [f64; 2], period: f64) -> Result<PeriodicityVerdict, FloquetError> {
    let t = pair.times();
    let phi = phase_accumulator(r, pair, t[0])?;
    let s = sigma_integral(r, &pair.grid, t[0])?;
    let n = t.len();
    let mut q: Vec<Vec<_>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    for i in 0..n {
        let a = r.alpha.value(t[i])?;
        let amp = 0.5 * (pair.nu_i[0] / pair.nu_i[i]).ln();
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let p = (s[i] + sign * phi.phi[i] + amp - rs[k] * (t[i] - t[0])).exp();
            let nu = pair.nu_r[i] + sign * pair.nu_i[i];
            q[2 * k].push(p);
            q[2 * k + 1].push((nu - a) * p);
        }
    }
    let t_end = t[n - 1];
    let scale = q.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut deviation: f64 = 0.0;
    for i in (0..n).rev() {
        if t[i] < t_end - period {
            break;
        }
        for col in &q {
            deviation = deviation.max((col[i] - interpolate(t, col, t[i] - period)).abs() / scale);
        }
    }
    Ok(PeriodicityVerdict { periodic: deviation <= PERIODICITY_TOL, deviation, tolerance: PERIODICITY_TOL, event_offset_deviation: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffexpr::CoefficientFn;
    use crate::grid::{TimeGrid, Window};
    use crate::reduction::{scalar_system_to_rce, ScalarSystem};

    #[test]
    fn dc_of_constant_and_cosine() {
        let g = TimeGrid::uniform(0.0, 20.0, 2001).unwrap();
        let c = vec![3.5; g.len()];
        assert!((dc_average(g.times(), &c, 2.0 * std::f64::consts::PI).unwrap() - 3.5).abs() < 1e-12);
        let cos: Vec<f64> = g.times().iter().map(|t| t.cos()).collect();
        assert!(dc_average(g.times(), &cos, 2.0 * std::f64::consts::PI).unwrap().abs() < 1e-9);
        assert!(dc_average(g.times(), &c, 30.0).is_err());
    }

    #[test]
    fn autonomous_system_as_periodic() {
        let w = Window::new(0.0, 3.0).unwrap();
        let s = ScalarSystem::new(CoefficientFn::constant(0.0), CoefficientFn::constant(-4.0));
        let r = scalar_system_to_rce(&s, &w).unwrap();
        let g = TimeGrid::uniform(0.0, 3.0, 301).unwrap();
        let pair = PrimitivePair::new(g, vec![0.0; 301], vec![2.0; 301], IntrinsicKind::Real).unwrap();
        let f = floquet_exponents(&r, &pair, 1.0).unwrap();
        assert!((f.r1.re - 2.0).abs() < 1e-12 && (f.r2.re + 2.0).abs() < 1e-12);
        assert!((f.multipliers[0].re - 2f64.exp()).abs() < 1e-9);
        assert!((f.multiplier_product - 1.0).abs() < 1e-10);
        assert!(f.modulus_mismatch.iter().all(|m| *m < 1e-9));
        assert!(!f.pi_flag);
        assert!(f.rce_periodic.unwrap().periodic && f.q_periodic.unwrap().periodic);
    }

    #[test]
    fn events_are_compared_modulo_period() {
        let g = TimeGrid::uniform(0.0, 10.0, 1001).unwrap();
        let v: Vec<f64> = g.times().iter().map(|t| 1.0 / (std::f64::consts::PI * t / 2.0).tan()).collect();
        let verdict = check_rce_periodicity_real(g.times(), &v, &[2.0, 4.0, 6.0, 8.0], 2.0).unwrap();
        assert!(verdict.periodic, "{verdict:?}");
        let shifted = check_rce_periodicity_real(g.times(), &v, &[2.0, 4.0, 6.0, 8.1], 2.0).unwrap();
        assert!(!shifted.periodic);
    }
}
