//! Builders for the bundled worked systems and the brute-force oracles that check them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffexpr::{parse_expression, CoefficientFn, ParseError};
use crate::grid::{GridError, Window};
use crate::numerics::bisect;
use crate::phaseportrait::PortraitKind;
use crate::reduction::{reduce, GeneralRiccati, ReducedRCE, ReductionError, ScalarSystem, SourceSystem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaseError {
    #[error("order N must be a positive integer")]
    ZeroOrder,
    #[error("oscillator index N = {0} must be odd")]
    EvenOrder(u32),
    #[error("case {case} needs parameter {param}")]
    MissingParameter { case: &'static str, param: &'static str },
    #[error("unknown case {0:?}")]
    UnknownCase(String),
    #[error("Bessel series did not converge within 200 terms at t = {t}")]
    SeriesNotConverged { t: f64 },
    #[error("oracle needs t >= 0, got {t}")]
    NegativeTime { t: f64 },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseName {
    /// `ν̇ = −ν² + 4`.
    Constant,
    /// `ż = −z² + 2/t²`.
    Polynomial,
    Bessel,
    Qho,
    Mathieu,
}

impl CaseName {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseName::Constant => "constant",
            CaseName::Polynomial => "polynomial",
            CaseName::Bessel => "bessel",
            CaseName::Qho => "qho",
            CaseName::Mathieu => "mathieu",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CaseError> {
        [CaseName::Constant, CaseName::Polynomial, CaseName::Bessel, CaseName::Qho, CaseName::Mathieu]
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CaseError::UnknownCase(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub name: CaseName,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl CaseSpec {
    pub fn constant() -> Self {
        CaseSpec { name: CaseName::Constant, n: None, a0: None, q: None }
    }

    pub fn polynomial() -> Self {
        CaseSpec { name: CaseName::Polynomial, n: None, a0: None, q: None }
    }

    pub fn bessel(n: u32) -> Self {
        CaseSpec { name: CaseName::Bessel, n: Some(n), a0: None, q: None }
    }

    pub fn qho(n: u32) -> Self {
        CaseSpec { name: CaseName::Qho, n: Some(n), a0: None, q: None }
    }

    pub fn mathieu(a0: f64, q: f64) -> Self {
        CaseSpec { name: CaseName::Mathieu, n: None, a0: Some(a0), q: Some(q) }
    }

    fn order(&self) -> Result<u32, CaseError> {
        match self.n {
            None => Err(CaseError::MissingParameter { case: self.name.as_str(), param: "N" }),
            Some(0) => Err(CaseError::ZeroOrder),
            Some(n) => Ok(n),
        }
    }

    fn mathieu_params(&self) -> Result<(f64, f64), CaseError> {
        let a0 = self.a0.ok_or(CaseError::MissingParameter { case: "mathieu", param: "a0" })?;
        let q = self.q.ok_or(CaseError::MissingParameter { case: "mathieu", param: "q" })?;
        Ok((a0, q))
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        match self.name {
            CaseName::Bessel => self.order().map(|_| ()),
            CaseName::Qho => {
                let n = self.order()?;
                if n.is_multiple_of(2) {
                    return Err(CaseError::EvenOrder(n));
                }
                Ok(())
            }
            CaseName::Mathieu => self.mathieu_params().map(|_| ()),
            CaseName::Constant | CaseName::Polynomial => Ok(()),
        }
    }

    pub fn source(&self) -> Result<SourceSystem, CaseError> {
        self.validate()?;
        Ok(match self.name {
            CaseName::Constant => SourceSystem::Riccati(constant_case()),
            CaseName::Polynomial => SourceSystem::Riccati(make_polynomial_case()),
            CaseName::Bessel => SourceSystem::Scalar(make_bessel(self.order()?)?),
            CaseName::Qho => SourceSystem::Scalar(make_qho(self.order()?)?),
            CaseName::Mathieu => {
                let (a0, q) = self.mathieu_params()?;
                SourceSystem::Scalar(make_mathieu(a0, q))
            }
        })
    }

    /// `ω₀₂` in its usual closed form.
    pub fn omega02_closed_form(&self) -> Result<String, CaseError> {
        Ok(match self.name {
            CaseName::Constant => "4".to_string(),
            CaseName::Polynomial => "2/t^2".to_string(),
            CaseName::Bessel => format!("(4*{}-1)/(4*t^2)-1", self.order()?.pow(2)),
            CaseName::Qho => format!("t^2-{}", self.order()?),
            CaseName::Mathieu => {
                let (a0, q) = self.mathieu_params()?;
                format!("{}+{}*cos(t)", fmt_param(a0), fmt_param(q))
            }
        })
    }

    /// Reduction with `ω₀₂` replaced by its closed form after a pointwise check.
    pub fn reduce(&self, window: &Window) -> Result<ReducedRCE, CaseError> {
        let r = reduce(&self.source()?, window)?;
        let closed = parse_expression(&self.omega02_closed_form()?)?;
        Ok(r.with_closed_form_omega02(closed, window)?)
    }

    pub fn default_window(&self) -> Window {
        let (a, b) = match self.name {
            CaseName::Constant => (0.0, 4.0),
            CaseName::Polynomial => (0.5, 10.0),
            CaseName::Bessel => (0.01, 20.0),
            CaseName::Qho => (-5.0, 5.0),
            CaseName::Mathieu => (0.0, 12.0 * PI),
        };
        Window { t0: a, t1: b }
    }

    pub fn period(&self) -> Option<f64> {
        match self.name {
            CaseName::Mathieu if self.q != Some(0.0) => Some(2.0 * PI),
            _ => None,
        }
    }

    /// Portrait kind when it does not depend on the parameters.
    pub fn expected_kind(&self) -> Option<PortraitKind> {
        match self.name {
            CaseName::Constant | CaseName::Polynomial => Some(PortraitKind::AttractorSeparatrix),
            CaseName::Bessel | CaseName::Qho => Some(PortraitKind::RepetitiveEscape),
            CaseName::Mathieu => None,
        }
    }
}

fn fmt_param(x: f64) -> String {
    if x < 0.0 {
        format!("({x})")
    } else {
        format!("{x}")
    }
}

fn coeff(src: &str) -> Result<CoefficientFn, CaseError> {
    Ok(CoefficientFn::parse(src)?)
}

pub fn constant_case() -> GeneralRiccati {
    GeneralRiccati { s2: CoefficientFn::constant(-1.0), s1: CoefficientFn::constant(0.0), s0: CoefficientFn::constant(4.0) }
}

/// `ÿ + ẏ/t + (1 − N²/t²)y = 0`, singular at `t = 0`.
pub fn make_bessel(n: u32) -> Result<ScalarSystem, CaseError> {
    if n == 0 {
        return Err(CaseError::ZeroOrder);
    }
    Ok(ScalarSystem::new(coeff("1/t")?.with_singular_points(&[0.0]), coeff(&format!("1-{}/t^2", n * n))?.with_singular_points(&[0.0])))
}

/// `ÿ + (N − t²)y = 0` for odd `N`.
pub fn make_qho(n: u32) -> Result<ScalarSystem, CaseError> {
    if n == 0 {
        return Err(CaseError::ZeroOrder);
    }
    if n.is_multiple_of(2) {
        return Err(CaseError::EvenOrder(n));
    }
    Ok(ScalarSystem::new(CoefficientFn::constant(0.0), coeff(&format!("{n}-t^2"))?))
}

/// `ÿ = (a₀ + q·cos t)y`.
pub fn make_mathieu(a0: f64, q: f64) -> ScalarSystem {
    let r0 = parse_expression(&format!("-({}+{}*cos(t))", fmt_param(a0), fmt_param(q))).expect("generated expression parses");
    ScalarSystem::new(CoefficientFn::constant(0.0), CoefficientFn::new(r0))
}

/// `ż = −z² + 2/t²`, with known solutions `2/t` and `−1/t`.
pub fn make_polynomial_case() -> GeneralRiccati {
    GeneralRiccati {
        s2: CoefficientFn::constant(-1.0),
        s1: CoefficientFn::constant(0.0),
        s0: CoefficientFn::parse("2/t^2").expect("literal parses"),
    }
}

/// `(2t³ − C)/(t(t³ + C))`.
pub fn polynomial_closed_form(c: f64, t: f64) -> f64 {
    (2.0 * t.powi(3) - c) / (t * (t.powi(3) + c))
}

/// `J_N(t)` by its power series, stopping once a term drops below `1e-16` of the partial sum.
pub fn oracle_bessel_first_kind(n: u32, t: f64) -> Result<f64, CaseError> {
    Ok(bessel_series(n, t)?[0])
}

/// `[J_N, J_N', J_N'']` from the term-wise differentiated series.
pub fn oracle_bessel_first_kind_derivs(n: u32, t: f64) -> Result<[f64; 3], CaseError> {
    bessel_series(n, t)
}

fn bessel_series(n: u32, t: f64) -> Result<[f64; 3], CaseError> {
    if t < 0.0 {
        return Err(CaseError::NegativeTime { t });
    }
    if t == 0.0 {
        let v = if n == 0 { 1.0 } else { 0.0 };
        let d = if n == 1 { 0.5 } else { 0.0 };
        let dd = match n {
            0 => -0.5,
            2 => 0.25,
            _ => 0.0,
        };
        return Ok([v, d, dd]);
    }
    let half = 0.5 * t;
    // Leading coefficient (t/2)^N / N!.
    let mut term = (1..=n).fold(1.0, |acc, k| acc * half / k as f64);
    let mut sums = [0.0; 3];
    for k in 0..200u32 {
        let p = f64::from(2 * k + n);
        sums[0] += term;
        sums[1] += term * p / t;
        sums[2] += term * p * (p - 1.0) / (t * t);
        let next = -term * half * half / (f64::from(k + 1) * f64::from(k + 1 + n));
        if next.abs() < 1e-16 * sums[0].abs() && k > 0 {
            return Ok(sums);
        }
        term = next;
    }
    Err(CaseError::SeriesNotConverged { t })
}

/// Positive zeros of `J_N` below `t_max`, by sign scanning and bisection on the series.
pub fn bessel_first_kind_zeros(n: u32, t_max: f64) -> Result<Vec<f64>, CaseError> {
    let step = 0.05;
    let mut zeros = Vec::new();
    let mut a = step;
    let mut fa = oracle_bessel_first_kind(n, a)?;
    while a < t_max {
        let b = (a + step).min(t_max);
        let fb = oracle_bessel_first_kind(n, b)?;
        if fa * fb < 0.0 {
            zeros.push(bisect(|x| oracle_bessel_first_kind(n, x).unwrap_or(f64::NAN), a, b, 1e-13));
        }
        a = b;
        fa = fb;
    }
    Ok(zeros)
}

/// Physicists' Hermite polynomial `H_k(t)` by the three-term recurrence.
pub fn hermite_polynomial(k: u32, t: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * t);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let next = 2.0 * t * cur - 2.0 * f64::from(j) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `H_k(t)·e^{−t²/2}`, a solution of `ÿ + (2k + 1 − t²)y = 0`.
pub fn oracle_hermite_wavefunction(k: u32, t: f64) -> f64 {
    hermite_polynomial(k, t) * (-0.5 * t * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reduction_matches_closed_form() {
        let w = Window::new(0.01, 20.0).unwrap();
        let r = CaseSpec::bessel(5).reduce(&w).unwrap();
        assert!((r.omega02.value(1.0).unwrap() - 23.75).abs() < 1e-12);
        assert!((r.omega02.value(1e6).unwrap() + 1.0).abs() < 1e-9);
        assert_eq!(r.omega02.to_string(), "(4*25-1)/(4*t^2)-1");
        let one = CaseSpec::bessel(1).reduce(&w).unwrap();
        assert!((one.omega02.value(2.0).unwrap() - (0.75 / 4.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn qho_and_mathieu_builders() {
        let w = Window::new(-5.0, 5.0).unwrap();
        let r = CaseSpec::qho(5).reduce(&w).unwrap();
        assert_eq!(r.omega02.value(0.0).unwrap(), -5.0);
        assert_eq!(r.omega02.value(3.0).unwrap(), 4.0);
        assert_eq!(make_qho(2), Err(CaseError::EvenOrder(2)));
        let m = CaseSpec::mathieu(-3.0, 1.0).reduce(&Window::new(0.0, 10.0).unwrap()).unwrap();
        assert_eq!(m.omega02.value(0.0).unwrap(), -2.0);
        assert_eq!(m.omega02.value(PI).unwrap(), -4.0);
        assert_eq!(m.omega01.as_constant(), Some(1.0));
        assert_eq!(m.eta.as_constant(), Some(0.0));
    }

    #[test]
    fn bessel_oracle_values() {
        assert_eq!(oracle_bessel_first_kind(0, 0.0).unwrap(), 1.0);
        assert_eq!(oracle_bessel_first_kind(5, 0.0).unwrap(), 0.0);
        assert!((oracle_bessel_first_kind(0, 1.0).unwrap() - 0.765_197_686_557_966_6).abs() < 1e-15);
        let z = bessel_first_kind_zeros(5, 10.0).unwrap();
        assert!((z[0] - 8.771_483_815_959_954).abs() < 1e-9);
    }

    #[test]
    fn bessel_series_solves_the_equation() {
        let mut t = 0.1;
        while t <= 20.0 {
            let [j, dj, ddj] = oracle_bessel_first_kind_derivs(5, t).unwrap();
            let res = ddj + dj / t + (1.0 - 25.0 / (t * t)) * j;
            assert!(res.abs() < 1e-8, "t = {t}: {res}");
            t += 0.1;
        }
    }

    #[test]
    fn hermite_wavefunction_solves_the_oscillator() {
        assert_eq!(oracle_hermite_wavefunction(0, 0.0), 1.0);
        assert_eq!(oracle_hermite_wavefunction(2, 0.0), -2.0);
        let psi = parse_expression("(4*t^2-2)*exp(-t^2/2)").unwrap();
        let dd = psi.differentiate().differentiate();
        let mut t = -6.0;
        while t <= 6.0 {
            assert!((psi.eval(t).unwrap() - oracle_hermite_wavefunction(2, t)).abs() < 1e-14);
            let res = dd.eval(t).unwrap() + (5.0 - t * t) * psi.eval(t).unwrap();
            assert!(res.abs() < 1e-8);
            t += 0.05;
        }
    }

    #[test]
    fn polynomial_closed_form_value() {
        assert!((polynomial_closed_form(1.0, 2.0) - 15.0 / 18.0).abs() < 1e-15);
        assert!((polynomial_closed_form(0.0, 3.0) - 2.0 / 3.0).abs() < 1e-15);
    }
}
