//! Phase-portrait classification of the RCE from its primitive pair and a set of probes.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeffexpr::EvalError;
use crate::grid::{TimeGrid, Window};
use crate::numerics::interpolate;
use crate::odeengine::{integrate_rce, IntegrateOptions, OdeError, PolePolicy, RceTrajectory};
use crate::primitive::{IntrinsicKind, PrimitivePair};
use crate::reduction::ReducedRCE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PortraitError {
    #[error("transient measurement needs a real primitive pair")]
    NotRealKind,
    #[error("solution never stays within the band of width {eps:e} around the attractor")]
    NeverEntersBand { eps: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Predisposition {
    StableCapable,
    EscapePredisposed,
    Mixed,
}

impl Predisposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Predisposition::StableCapable => "stable_capable",
            Predisposition::EscapePredisposed => "escape_predisposed",
            Predisposition::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PortraitKind {
    AttractorSeparatrix,
    RepetitiveEscape,
    Degenerate,
    Inconclusive,
}

impl PortraitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PortraitKind::AttractorSeparatrix => "attractor_separatrix",
            PortraitKind::RepetitiveEscape => "repetitive_escape",
            PortraitKind::Degenerate => "degenerate",
            PortraitKind::Inconclusive => "inconclusive",
        }
    }
}

/// Signs of `ω₀₁` and `ω₀₂` on 512 samples of `window`. A zero counts as a sign change.
pub fn sign_predisposition(r: &ReducedRCE, window: &Window) -> Result<Predisposition, EvalError> {
    let singular = r.singular_points();
    let (mut same, mut opposite) = (0usize, 0usize);
    let mut total = 0usize;
    for t in window.linspace(512) {
        if singular.iter().any(|s| (t - s).abs() < 1e-12 * (1.0 + s.abs())) {
            continue;
        }
        let p = r.omega01.value(t)? * r.omega02.value(t)?;
        total += 1;
        if p > 0.0 {
            same += 1;
        } else if p < 0.0 {
            opposite += 1;
        }
    }
    Ok(if same == total {
        Predisposition::StableCapable
    } else if opposite == total {
        Predisposition::EscapePredisposed
    } else {
        Predisposition::Mixed
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortraitOptions {
    /// Relative band `ε·(1 + |attractor|)` used for convergence.
    pub eps: f64,
    pub integrate: IntegrateOptions,
}

impl Default for PortraitOptions {
    fn default() -> Self {
        PortraitOptions { eps: 1e-3, integrate: IntegrateOptions { policy: PolePolicy::Continue, ..IntegrateOptions::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub ic: f64,
    pub above_separatrix: bool,
    pub escape_times: Vec<f64>,
    /// Time after which the probe stays in the band around the attractor.
    pub transient: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortraitReport {
    pub kind: PortraitKind,
    pub predisposition: Predisposition,
    pub times: Vec<f64>,
    pub attractor: Option<Vec<f64>>,
    pub separatrix: Option<Vec<f64>>,
    /// Escape events of the attractor itself inside the window.
    pub attractor_events: usize,
    /// Largest transient among the probes started above the separatrix.
    pub transient_time: Option<f64>,
    /// Mean spacing of the escape events of a probe, for repetitive escape.
    pub escape_cadence: Option<f64>,
    pub probes: Vec<ProbeOutcome>,
}

fn band_excess(nu: f64, att: f64, eps: f64) -> f64 {
    if !nu.is_finite() {
        return f64::INFINITY;
    }
    (nu - att).abs() - eps * (1.0 + att.abs())
}

/// First time after which `ν` stays within `eps·(1 + |attractor|)` of the attractor, located
/// to a hundredth of the grid step by re-integrating the last out-of-band step.
fn transient_of(r: &ReducedRCE, pair: &PrimitivePair, traj: &RceTrajectory, eps: f64, opts: &IntegrateOptions) -> Result<Option<f64>, PortraitError> {
    let t = pair.times();
    let att: Vec<f64> = (0..t.len()).map(|i| pair.nu_r[i] + pair.nu_i[i]).collect();
    let nu = traj.real_values();
    let Some(last_out) = (0..t.len()).rev().find(|&i| band_excess(nu[i], att[i], eps) > 0.0) else {
        return Ok(Some(t[0]));
    };
    if last_out + 1 == t.len() {
        return Ok(None);
    }
    let sub = TimeGrid::uniform(t[last_out], t[last_out + 1], 101).map_err(OdeError::from)?;
    let fine = integrate_rce(r, Complex64::new(nu[last_out], 0.0), &sub, opts)?;
    let fv = fine.real_values();
    let ft = sub.times();
    let excess: Vec<f64> = ft.iter().zip(&fv).map(|(s, v)| band_excess(*v, interpolate(t, &att, *s), eps)).collect();
    let k = (0..ft.len()).rev().find(|&k| excess[k] > 0.0).unwrap_or(0);
    if k + 1 >= ft.len() {
        return Ok(Some(ft[ft.len() - 1]));
    }
    let (a, b) = (excess[k], excess[k + 1]);
    if !a.is_finite() {
        return Ok(Some(ft[k + 1]));
    }
    Ok(Some(ft[k] + (ft[k + 1] - ft[k]) * a / (a - b)))
}

/// Time, measured from the start of the pair's grid, after which the solution from `ic`
/// stays within `eps·(1 + |attractor|)` of the attractor.
pub fn measure_rce_transient(r: &ReducedRCE, pair: &PrimitivePair, ic: f64, eps: f64, opts: &IntegrateOptions) -> Result<f64, PortraitError> {
    if pair.kind != IntrinsicKind::Real {
        return Err(PortraitError::NotRealKind);
    }
    let traj = integrate_rce(r, Complex64::new(ic, 0.0), &pair.grid, opts)?;
    match transient_of(r, pair, &traj, eps, opts)? {
        Some(t) => Ok(t - pair.grid.t0()),
        None => Err(PortraitError::NeverEntersBand { eps }),
    }
}

pub fn default_portrait_probes(pair: &PrimitivePair) -> Vec<f64> {
    let (nr, ni) = (pair.nu_r[0], pair.nu_i[0].abs());
    let d = 0.1 * ni;
    let (att, sep) = (nr + ni, nr - ni);
    vec![sep + d, sep - d, att + d, att - d, nr + 5.0 * ni, nr - 5.0 * ni]
}

pub fn classify_portrait(r: &ReducedRCE, pair: &PrimitivePair, opts: &PortraitOptions) -> Result<PortraitReport, PortraitError> {
    let window = pair.grid.window();
    let predisposition = sign_predisposition(r, &window)?;
    let times = pair.times().to_vec();
    let mut report = PortraitReport {
        kind: PortraitKind::Inconclusive,
        predisposition,
        times,
        attractor: None,
        separatrix: None,
        attractor_events: 0,
        transient_time: None,
        escape_cadence: None,
        probes: Vec::new(),
    };
    if pair.max_abs_intrinsic() < 1e-12 {
        report.kind = PortraitKind::Degenerate;
        return Ok(report);
    }
    match pair.kind {
        IntrinsicKind::Imaginary => {
            let traj = integrate_rce(r, Complex64::new(pair.nu_r[0], 0.0), &pair.grid, &opts.integrate)?;
            let ev: Vec<f64> = traj.escape_events.iter().map(|e| e.t_escape).collect();
            if ev.len() >= 2 {
                report.escape_cadence = Some((ev[ev.len() - 1] - ev[0]) / (ev.len() - 1) as f64);
            }
            report.probes.push(ProbeOutcome { ic: pair.nu_r[0], above_separatrix: false, escape_times: ev, transient: None, error: None });
            report.kind = PortraitKind::RepetitiveEscape;
        }
        IntrinsicKind::Real => {
            let att: Vec<f64> = pair.plus_values().iter().map(|v| v.re).collect();
            let sep: Vec<f64> = pair.minus_values().iter().map(|v| v.re).collect();
            report.attractor_events = pair.poles.len();
            let sep0 = sep[0];
            let outcomes: Vec<ProbeOutcome> = default_portrait_probes(pair)
                .into_par_iter()
                .map(|ic| {
                    let above = ic > sep0;
                    let run = integrate_rce(r, Complex64::new(ic, 0.0), &pair.grid, &opts.integrate)
                        .map_err(PortraitError::from)
                        .and_then(|tr| Ok((tr.escape_events.iter().map(|e| e.t_escape).collect::<Vec<_>>(), transient_of(r, pair, &tr, opts.eps, &opts.integrate)?)));
                    match run {
                        Ok((escape_times, transient)) => ProbeOutcome { ic, above_separatrix: above, escape_times, transient, error: None },
                        Err(e) => ProbeOutcome { ic, above_separatrix: above, escape_times: Vec::new(), transient: None, error: Some(e.to_string()) },
                    }
                })
                .collect();
            let confirmed = outcomes.iter().all(|p| {
                if p.error.is_some() || p.transient.is_none() {
                    return false;
                }
                pair.has_poles() || p.escape_times.len() == usize::from(!p.above_separatrix)
            });
            report.transient_time = outcomes
                .iter()
                .filter(|p| p.above_separatrix)
                .filter_map(|p| p.transient.map(|t| t - pair.grid.t0()))
                .reduce(f64::max);
            report.kind = if confirmed { PortraitKind::AttractorSeparatrix } else { PortraitKind::Inconclusive };
            report.attractor = Some(att);
            report.separatrix = Some(sep);
            report.probes = outcomes;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffexpr::CoefficientFn;
    use crate::reduction::{reduce_general_riccati, GeneralRiccati};

    fn constant(s0: f64, t1: f64) -> ReducedRCE {
        let c = CoefficientFn::constant;
        reduce_general_riccati(&GeneralRiccati { s2: c(-1.0), s1: c(0.0), s0: c(s0) }, &Window::new(0.0, t1).unwrap()).unwrap()
    }

    #[test]
    fn predisposition_follows_signs() {
        let w = Window::new(0.0, 1.0).unwrap();
        assert_eq!(sign_predisposition(&constant(4.0, 1.0), &w).unwrap(), Predisposition::StableCapable);
        assert_eq!(sign_predisposition(&constant(-4.0, 1.0), &w).unwrap(), Predisposition::EscapePredisposed);
        assert_eq!(sign_predisposition(&constant(0.0, 1.0), &w).unwrap(), Predisposition::Mixed);
    }

    #[test]
    fn constant_portrait_and_transient() {
        let r = constant(4.0, 10.0);
        let g = TimeGrid::uniform(0.0, 10.0, 1001).unwrap();
        let pair = PrimitivePair::new(g, vec![0.0; 1001], vec![2.0; 1001], IntrinsicKind::Real).unwrap();
        let rep = classify_portrait(&r, &pair, &PortraitOptions::default()).unwrap();
        assert_eq!(rep.kind, PortraitKind::AttractorSeparatrix);
        let below = rep.probes.iter().find(|p| (p.ic + 2.2).abs() < 1e-12).unwrap();
        assert_eq!(below.escape_times.len(), 1);
        let opts = PortraitOptions::default().integrate;
        let want = 0.25 * ((2.0 - 1.5e-3) / 1.5e-3f64).ln();
        assert!((measure_rce_transient(&r, &pair, 0.0, 1e-3, &opts).unwrap() - want).abs() < 1e-6);
        assert_eq!(measure_rce_transient(&r, &pair, 2.0, 1e-3, &opts).unwrap(), 0.0);
        assert!(measure_rce_transient(&r, &pair, -3.0, 1e-3, &opts).unwrap() > 0.25 * 5f64.ln());
    }
}
