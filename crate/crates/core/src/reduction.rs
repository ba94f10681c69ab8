//! Reduction of the three input forms to the canonical RCE `ν̇ = −ω₀₁ν² + ω₀₂`.

use num_complex::Complex64;
use thiserror::Error;

use crate::coeffexpr::{CoefficientFn, EvalError, Expr};
use crate::grid::Window;

/// Number of samples used to check window preconditions.
pub const PRECONDITION_SAMPLES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error("{coefficient} vanishes at t = {t} inside the window")]
    VanishingLeading { coefficient: &'static str, t: f64 },
    #[error("omega01 must stay positive on the window, found {value} at t = {t}")]
    NonPositiveOmega01 { t: f64, value: f64 },
    #[error("coefficient evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("closed form for omega02 disagrees with the reduction at t = {t}: {closed} vs {derived}")]
    ClosedFormMismatch { t: f64, closed: f64, derived: f64 },
    #[error("leading coefficient a must be nonzero")]
    ZeroLeading,
}

/// `ż = s₂z² + s₁z + s₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralRiccati {
    pub s2: CoefficientFn,
    pub s1: CoefficientFn,
    pub s0: CoefficientFn,
}

/// `ÿ + r₁ẏ + r₀y = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSystem {
    pub r1: CoefficientFn,
    pub r0: CoefficientFn,
}

/// `ẋ = A(t)x` with `A = [[a11, a12], [a21, a22]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix2x2 {
    pub a11: CoefficientFn,
    pub a12: CoefficientFn,
    pub a21: CoefficientFn,
    pub a22: CoefficientFn,
}

impl StateMatrix2x2 {
    /// Companion form `[[0, 1], [−r₀, −r₁]]` of a scalar system.
    pub fn companion(s: &ScalarSystem) -> Self {
        StateMatrix2x2 {
            a11: CoefficientFn::constant(0.0),
            a12: CoefficientFn::constant(1.0),
            a21: CoefficientFn::new((-s.r0.expr().clone()).simplify()),
            a22: CoefficientFn::new((-s.r1.expr().clone()).simplify()),
        }
    }

    pub fn eval(&self, t: f64) -> Result<[[f64; 2]; 2], EvalError> {
        Ok([[self.a11.value(t)?, self.a12.value(t)?], [self.a21.value(t)?, self.a22.value(t)?]])
    }

    pub fn trace_expr(&self) -> Expr {
        (self.a11.expr().clone() + self.a22.expr().clone()).simplify()
    }

    fn entries(&self) -> [&CoefficientFn; 4] {
        [&self.a11, &self.a12, &self.a21, &self.a22]
    }
}

impl ScalarSystem {
    pub fn new(r1: CoefficientFn, r0: CoefficientFn) -> Self {
        ScalarSystem { r1, r0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSystem {
    Riccati(GeneralRiccati),
    Scalar(ScalarSystem),
    StateMatrix(StateMatrix2x2),
}

/// Canonical RCE data plus the shift `z = ν + η`, the state-matrix offset `α` and the
/// eigenvalue offset `σ₀ = ω₀₁η`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRCE {
    pub omega01: CoefficientFn,
    pub omega02: CoefficientFn,
    pub eta: CoefficientFn,
    pub alpha: CoefficientFn,
    pub sigma0: CoefficientFn,
    source: SourceSystem,
    state_matrix: StateMatrix2x2,
    equivalent_scalar: ScalarSystem,
}

fn coeff(e: Expr) -> CoefficientFn {
    CoefficientFn::new(e.simplify())
}

fn sample_times(window: &Window, singular: &[f64]) -> Vec<f64> {
    window
        .linspace(PRECONDITION_SAMPLES)
        .into_iter()
        .filter(|t| singular.iter().all(|s| (t - s).abs() > 1e-12 * (1.0 + s.abs())))
        .collect()
}

fn check_nonvanishing(c: &CoefficientFn, name: &'static str, window: &Window) -> Result<(), ReductionError> {
    let times = sample_times(window, c.singular_points());
    let mut prev: Option<(f64, f64)> = None;
    for t in times {
        let v = c.value(t)?;
        if v == 0.0 {
            return Err(ReductionError::VanishingLeading { coefficient: name, t });
        }
        if let Some((tp, vp)) = prev {
            if (vp < 0.0) != (v < 0.0) {
                return Err(ReductionError::VanishingLeading { coefficient: name, t: 0.5 * (tp + t) });
            }
        }
        prev = Some((t, v));
    }
    Ok(())
}

/// Scalar second-order equation satisfied by `x₁` of `ẋ = A(t)x`.
fn scalar_of_state_matrix(m: &StateMatrix2x2) -> ScalarSystem {
    let (a11, a12, a21, a22) = (m.a11.expr().clone(), m.a12.expr().clone(), m.a21.expr().clone(), m.a22.expr().clone());
    let da11 = m.a11.derivative_expr().clone();
    let da12 = m.a12.derivative_expr().clone();
    let r1 = -a11.clone() - a22.clone() - da12.clone() / a12.clone();
    let r0 = -da11 + da12 * a11.clone() / a12.clone() - a12 * a21 + a11 * a22;
    ScalarSystem { r1: coeff(r1), r0: coeff(r0) }
}

impl ReducedRCE {
    pub fn source(&self) -> &SourceSystem {
        &self.source
    }

    /// State-matrix realization whose first state is the time-domain solution `y`.
    pub fn state_matrix(&self) -> &StateMatrix2x2 {
        &self.state_matrix
    }

    /// Scalar equation `ÿ + r₁ẏ + r₀y = 0` for the reconstructed time-domain solution.
    pub fn equivalent_scalar(&self) -> &ScalarSystem {
        &self.equivalent_scalar
    }

    pub fn omega01_at(&self, t: f64) -> Result<f64, EvalError> {
        self.omega01.value(t)
    }

    pub fn omega02_at(&self, t: f64) -> Result<f64, EvalError> {
        self.omega02.value(t)
    }

    /// Right-hand side `−ω₀₁ν² + ω₀₂`.
    pub fn rhs(&self, t: f64, nu: f64) -> Result<f64, EvalError> {
        Ok(-self.omega01.value(t)? * nu * nu + self.omega02.value(t)?)
    }

    pub fn rhs_complex(&self, t: f64, nu: Complex64) -> Result<Complex64, EvalError> {
        Ok(-nu * nu * self.omega01.value(t)? + self.omega02.value(t)?)
    }

    /// Union of declared singular points of every coefficient.
    pub fn singular_points(&self) -> Vec<f64> {
        let mut all: Vec<f64> = [&self.omega01, &self.omega02, &self.eta, &self.alpha, &self.sigma0]
            .iter()
            .flat_map(|c| c.singular_points().iter().copied())
            .chain(self.state_matrix.entries().iter().flat_map(|c| c.singular_points().iter().copied()))
            .collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }

    /// Checks `ω₀₁ > 0` at the precondition samples of `window`.
    pub fn check_window(&self, window: &Window) -> Result<(), ReductionError> {
        for t in sample_times(window, &self.singular_points()) {
            let v = self.omega01.value(t)?;
            if v <= 0.0 || !v.is_finite() {
                return Err(ReductionError::NonPositiveOmega01 { t, value: v });
            }
        }
        Ok(())
    }

    /// Replaces ω₀₂ by an equivalent closed form after checking pointwise agreement to 1e-12.
    pub fn with_closed_form_omega02(mut self, closed: Expr, window: &Window) -> Result<Self, ReductionError> {
        let closed = CoefficientFn::new(closed);
        for t in sample_times(window, &self.singular_points()).into_iter().step_by(4) {
            let (a, b) = (closed.value(t)?, self.omega02.value(t)?);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(ReductionError::ClosedFormMismatch { t, closed: a, derived: b });
            }
        }
        self.omega02 = closed;
        Ok(self)
    }
}

/// Reduces `ż = s₂z² + s₁z + s₀` with the shift `η = −s₁/(2s₂)`.
pub fn reduce_general_riccati(g: &GeneralRiccati, window: &Window) -> Result<ReducedRCE, ReductionError> {
    check_nonvanishing(&g.s2, "s2", window)?;
    let (s2, s1, s0) = (g.s2.expr().clone(), g.s1.expr().clone(), g.s0.expr().clone());
    let eta = coeff(-s1.clone() / (Expr::Const(2.0) * s2.clone()));
    let omega01 = coeff(-s2.clone());
    let omega02 = coeff(s0.clone() - s2.clone() * eta.expr().clone().powi(2) - eta.derivative_expr().clone());
    let sigma0 = coeff(omega01.expr().clone() * eta.expr().clone());
    let state_matrix = StateMatrix2x2 {
        a11: sigma0.clone(),
        a12: omega01.clone(),
        a21: omega02.clone(),
        a22: sigma0.clone(),
    };
    let equivalent_scalar = ScalarSystem {
        r1: coeff(-(s1 + g.s2.derivative_expr().clone() / s2.clone())),
        r0: coeff(s0 * s2),
    };
    let r = ReducedRCE {
        omega01,
        omega02,
        eta,
        alpha: CoefficientFn::constant(0.0),
        sigma0,
        source: SourceSystem::Riccati(g.clone()),
        state_matrix,
        equivalent_scalar,
    };
    r.check_window(window)?;
    Ok(r)
}

/// Reduces `ÿ + r₁ẏ + r₀y = 0`.
pub fn scalar_system_to_rce(s: &ScalarSystem, window: &Window) -> Result<ReducedRCE, ReductionError> {
    let (r1, r0) = (s.r1.expr().clone(), s.r0.expr().clone());
    let half = Expr::Const(0.5);
    let eta = coeff(-(half.clone() * r1.clone()));
    let alpha = coeff(half.clone() * r1.clone());
    let omega02 = coeff(half * s.r1.derivative_expr().clone() + Expr::Const(0.25) * r1.powi(2) - r0);
    let r = ReducedRCE {
        omega01: CoefficientFn::constant(1.0),
        omega02,
        sigma0: eta.clone(),
        eta,
        alpha,
        source: SourceSystem::Scalar(s.clone()),
        state_matrix: StateMatrix2x2::companion(s),
        equivalent_scalar: s.clone(),
    };
    r.check_window(window)?;
    Ok(r)
}

/// Reduces a 2x2 state matrix.
pub fn state_matrix_to_rce(m: &StateMatrix2x2, window: &Window) -> Result<ReducedRCE, ReductionError> {
    check_nonvanishing(&m.a12, "a12", window)?;
    let (a11, a12, a21, a22) = (m.a11.expr().clone(), m.a12.expr().clone(), m.a21.expr().clone(), m.a22.expr().clone());
    let two_a12 = Expr::Const(2.0) * a12.clone();
    let eta = coeff((a11.clone() + a22.clone()) / two_a12.clone());
    let alpha = coeff((a11 - a22) / two_a12);
    let omega02 = coeff(alpha.derivative_expr().clone() + a12.clone() * alpha.expr().clone().powi(2) + a21);
    let sigma0 = coeff(a12.clone() * eta.expr().clone());
    let r = ReducedRCE {
        omega01: m.a12.clone(),
        omega02,
        eta,
        alpha,
        sigma0,
        source: SourceSystem::StateMatrix(m.clone()),
        state_matrix: m.clone(),
        equivalent_scalar: scalar_of_state_matrix(m),
    };
    r.check_window(window)?;
    Ok(r)
}

/// Reduces any supported source form.
pub fn reduce(source: &SourceSystem, window: &Window) -> Result<ReducedRCE, ReductionError> {
    match source {
        SourceSystem::Riccati(g) => reduce_general_riccati(g, window),
        SourceSystem::Scalar(s) => scalar_system_to_rce(s, window),
        SourceSystem::StateMatrix(m) => state_matrix_to_rce(m, window),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LtiKind {
    Real,
    Imaginary,
    Degenerate,
}

/// LTI characteristic roots written as `λ_R ± λ_I`. For the imaginary kind
/// `lambda_i` holds the magnitude of the imaginary part.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LtiPair {
    pub lambda_r: f64,
    pub lambda_i: f64,
    pub kind: LtiKind,
    /// Product of the roots, `c/a`.
    pub product: f64,
}

impl LtiPair {
    /// Both roots; the real pair is computed in the cancellation-free form.
    pub fn roots(&self) -> [Complex64; 2] {
        match self.kind {
            LtiKind::Imaginary => [
                Complex64::new(self.lambda_r, self.lambda_i),
                Complex64::new(self.lambda_r, -self.lambda_i),
            ],
            LtiKind::Degenerate => [Complex64::new(self.lambda_r, 0.0); 2],
            LtiKind::Real => {
                let big = if self.lambda_r >= 0.0 { self.lambda_r + self.lambda_i } else { self.lambda_r - self.lambda_i };
                [Complex64::new(big, 0.0), Complex64::new(self.product / big, 0.0)]
            }
        }
    }
}

pub fn lti_characteristic_pair(a: f64, b: f64, c: f64) -> Result<LtiPair, ReductionError> {
    if a == 0.0 {
        return Err(ReductionError::ZeroLeading);
    }
    let lambda_r = -b / (2.0 * a);
    let radicand = lambda_r * lambda_r - c / a;
    let scale = lambda_r * lambda_r + (c / a).abs();
    let kind = if radicand.abs() <= 4.0 * f64::EPSILON * scale {
        LtiKind::Degenerate
    } else if radicand > 0.0 {
        LtiKind::Real
    } else {
        LtiKind::Imaginary
    };
    let lambda_i = if kind == LtiKind::Degenerate { 0.0 } else { radicand.abs().sqrt() };
    Ok(LtiPair { lambda_r, lambda_i, kind, product: c / a })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CoefficientFn {
        CoefficientFn::parse(s).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn riccati_examples() {
        let w = Window::new(0.5, 10.0).unwrap();
        let r = reduce_general_riccati(&GeneralRiccati { s2: c("-1"), s1: c("0"), s0: c("2/t^2") }, &w).unwrap();
        for t in [0.5, 1.0, 3.7] {
            assert!(close(r.omega01_at(t).unwrap(), 1.0));
            assert!(close(r.omega02_at(t).unwrap(), 2.0 / (t * t)));
            assert!(close(r.eta.value(t).unwrap(), 0.0));
        }
        let r = reduce_general_riccati(&GeneralRiccati { s2: c("-1"), s1: c("0"), s0: c("4") }, &w).unwrap();
        assert_eq!(r.omega02.as_constant(), Some(4.0));
        let r = reduce_general_riccati(&GeneralRiccati { s2: c("-1"), s1: c("2"), s0: c("0") }, &w).unwrap();
        assert_eq!(r.eta.as_constant(), Some(1.0));
        assert_eq!(r.omega01.as_constant(), Some(1.0));
        assert_eq!(r.omega02.as_constant(), Some(1.0));
    }

    #[test]
    fn riccati_rejects_vanishing_s2() {
        let w = Window::new(-1.0, 1.0).unwrap();
        let err = reduce_general_riccati(&GeneralRiccati { s2: c("t"), s1: c("0"), s0: c("1") }, &w).unwrap_err();
        assert!(matches!(err, ReductionError::VanishingLeading { coefficient: "s2", .. }));
        let err = reduce_general_riccati(&GeneralRiccati { s2: c("1"), s1: c("0"), s0: c("1") }, &w).unwrap_err();
        assert!(matches!(err, ReductionError::NonPositiveOmega01 { .. }));
    }

    #[test]
    fn scalar_examples() {
        let w = Window::new(0.01, 30.0).unwrap();
        let bessel = ScalarSystem::new(c("1/t"), c("1-25/t^2"));
        let r = scalar_system_to_rce(&bessel, &w).unwrap();
        for t in [0.01, 1.0, 7.5, 30.0] {
            assert!(close(r.omega02_at(t).unwrap(), 99.0 / (4.0 * t * t) - 1.0));
            assert!(close(r.eta.value(t).unwrap(), -1.0 / (2.0 * t)));
        }
        let w = Window::new(0.0, 20.0).unwrap();
        let mathieu = ScalarSystem::new(c("0"), c("-(0.3+1*cos(t))"));
        let r = scalar_system_to_rce(&mathieu, &w).unwrap();
        assert!(close(r.omega02_at(2.0).unwrap(), 0.3 + 2f64.cos()));
        assert_eq!(r.eta.as_constant(), Some(0.0));
        let qho = ScalarSystem::new(c("0"), c("5-t^2"));
        let r = scalar_system_to_rce(&qho, &Window::new(-5.0, 5.0).unwrap()).unwrap();
        assert!(close(r.omega02_at(3.0).unwrap(), 4.0));
    }

    #[test]
    fn state_matrix_examples() {
        let w = Window::new(0.0, 5.0).unwrap();
        let m = StateMatrix2x2 { a11: c("0"), a12: c("1"), a21: c("4"), a22: c("0") };
        let r = state_matrix_to_rce(&m, &w).unwrap();
        assert_eq!(r.omega02.as_constant(), Some(4.0));
        assert_eq!(r.eta.as_constant(), Some(0.0));
        assert_eq!(r.alpha.as_constant(), Some(0.0));
        let m = StateMatrix2x2 { a11: c("1"), a12: c("1"), a21: c("0"), a22: c("1") };
        let r = state_matrix_to_rce(&m, &w).unwrap();
        assert_eq!(r.alpha.as_constant(), Some(0.0));
        assert_eq!(r.eta.as_constant(), Some(1.0));
        assert_eq!(r.omega02.as_constant(), Some(0.0));
        let m = StateMatrix2x2 { a11: c("0"), a12: c("0"), a21: c("1"), a22: c("0") };
        assert!(matches!(state_matrix_to_rce(&m, &w), Err(ReductionError::VanishingLeading { coefficient: "a12", .. })));
    }

    #[test]
    fn companion_matches_scalar_reduction() {
        let w = Window::new(0.5, 4.0).unwrap();
        let s = ScalarSystem::new(c("sin(t)+1/t"), c("t^2-3*cos(2*t)"));
        let a = scalar_system_to_rce(&s, &w).unwrap();
        let b = state_matrix_to_rce(&StateMatrix2x2::companion(&s), &w).unwrap();
        for t in w.linspace(50) {
            for (x, y) in [(&a.omega01, &b.omega01), (&a.omega02, &b.omega02), (&a.eta, &b.eta), (&a.alpha, &b.alpha), (&a.sigma0, &b.sigma0)] {
                assert!(close(x.value(t).unwrap(), y.value(t).unwrap()));
            }
            let (sa, sb) = (a.equivalent_scalar(), b.equivalent_scalar());
            assert!(close(sa.r1.value(t).unwrap(), sb.r1.value(t).unwrap()));
            assert!(close(sa.r0.value(t).unwrap(), sb.r0.value(t).unwrap()));
        }
    }

    #[test]
    fn shifted_known_solutions_solve_reduced_equation() {
        // ż = −z² + 2z + 1 with η = 1: any z solves it iff ν = z − 1 solves ν̇ = −ν² + 2.
        let w = Window::new(0.0, 3.0).unwrap();
        let r = reduce_general_riccati(&GeneralRiccati { s2: c("-1"), s1: c("2"), s0: c("1") }, &w).unwrap();
        assert_eq!(r.omega02.as_constant(), Some(2.0));
        let r = reduce_general_riccati(&GeneralRiccati { s2: c("-1"), s1: c("0"), s0: c("2/t^2") }, &Window::new(1.0, 5.0).unwrap()).unwrap();
        for t in [1.0, 2.0, 4.5] {
            for (nu, dnu) in [(-1.0 / t, 1.0 / (t * t)), (2.0 / t, -2.0 / (t * t))] {
                assert!((dnu - r.rhs(t, nu).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lti_examples() {
        let p = lti_characteristic_pair(1.0, 0.0, -4.0).unwrap();
        assert_eq!((p.lambda_r, p.lambda_i, p.kind), (0.0, 2.0, LtiKind::Real));
        let p = lti_characteristic_pair(1.0, 2.0, 5.0).unwrap();
        assert_eq!((p.lambda_r, p.lambda_i, p.kind), (-1.0, 2.0, LtiKind::Imaginary));
        let p = lti_characteristic_pair(1.0, 2.0, 1.0).unwrap();
        assert_eq!((p.lambda_r, p.lambda_i, p.kind), (-1.0, 0.0, LtiKind::Degenerate));
        assert!(lti_characteristic_pair(0.0, 1.0, 1.0).is_err());
    }
}
