//! Dynamic eigenvalues, closed-form time-domain solutions and the fundamental matrix.
//!
//! A member `ν_R + ν_I·f'/f(φ − K)` of the continuum corresponds to
//! `y = A·g·f(φ − K)` with envelope `g = e^{∫σ₀}/√ν_I` and `f` one of cosh, sinh, cos, sin.
//! The second state is `x₂ = (ν − α)y`, evaluated in the pole-free form
//! `(ν_R − α)y + A·g·ν_I·f'(φ − K)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffexpr::EvalError;
use crate::family::{family_value, Branch, FamilySolution, PhaseAccumulator};
use crate::grid::TimeGrid;
use crate::numerics::{cumulative_hermite, cumulative_integral, interpolate_with_derivative, stencil_derivative};
use crate::primitive::{IntrinsicKind, PrimitivePair};
use crate::reduction::ReducedRCE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeDomainError {
    #[error("shape {shape} needs a {expected} pair, got {actual}")]
    KindMismatch { shape: &'static str, expected: &'static str, actual: &'static str },
    #[error("the two members coincide at t = {t}; the fundamental matrix is singular")]
    DegenerateColumns { t: f64 },
    #[error("member vanishes at the normalization time {t}")]
    ZeroAtBase { t: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cosh,
    Sinh,
    Cos,
    Sin,
    ExpPlus,
    ExpMinus,
}

impl Shape {
    pub fn of_branch(b: Branch) -> Shape {
        match b {
            Branch::Tanh => Shape::Cosh,
            Branch::Coth => Shape::Sinh,
            Branch::Tan => Shape::Cos,
            Branch::Cot => Shape::Sin,
            Branch::PrimitivePlus => Shape::ExpPlus,
            Branch::PrimitiveMinus => Shape::ExpMinus,
        }
    }

    pub fn branch(self) -> Branch {
        match self {
            Shape::Cosh => Branch::Tanh,
            Shape::Sinh => Branch::Coth,
            Shape::Cos => Branch::Tan,
            Shape::Sin => Branch::Cot,
            Shape::ExpPlus => Branch::PrimitivePlus,
            Shape::ExpMinus => Branch::PrimitiveMinus,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Cosh => "cosh",
            Shape::Sinh => "sinh",
            Shape::Cos => "cos",
            Shape::Sin => "sin",
            Shape::ExpPlus => "exp_plus",
            Shape::ExpMinus => "exp_minus",
        }
    }

    pub fn parse(s: &str) -> Option<Shape> {
        [Shape::Cosh, Shape::Sinh, Shape::Cos, Shape::Sin, Shape::ExpPlus, Shape::ExpMinus]
            .into_iter()
            .find(|x| x.as_str() == s)
    }

    /// `(f(x), f'(x))`.
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Shape::Cosh => (x.cosh(), x.sinh()),
            Shape::Sinh => (x.sinh(), x.cosh()),
            Shape::Cos => (x.cos(), -x.sin()),
            Shape::Sin => (x.sin(), x.cos()),
            Shape::ExpPlus => (x.exp(), x.exp()),
            Shape::ExpMinus => ((-x).exp(), -(-x).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicEigenvalue {
    pub lambda: Vec<f64>,
    pub source: FamilySolution,
}

/// `λ = σ₀ + ω₀₁ν` for `member` and its complement.
pub fn dynamic_eigenvalues(
    r: &ReducedRCE,
    pair: &PrimitivePair,
    phi: &PhaseAccumulator,
    member: &FamilySolution,
) -> Result<(DynamicEigenvalue, DynamicEigenvalue), TimeDomainError> {
    let one = |f: &FamilySolution| -> Result<DynamicEigenvalue, TimeDomainError> {
        check_kind(Shape::of_branch(f.branch), pair.kind)?;
        let mut lambda = Vec::with_capacity(pair.len());
        for (i, t) in pair.times().iter().enumerate() {
            lambda.push(r.sigma0.value(*t)? + r.omega01.value(*t)? * family_value(f, pair, phi, i));
        }
        Ok(DynamicEigenvalue { lambda, source: *f })
    };
    Ok((one(member)?, one(&member.complement())?))
}

fn check_kind(shape: Shape, kind: IntrinsicKind) -> Result<(), TimeDomainError> {
    if shape.branch().fits(kind) {
        return Ok(());
    }
    let expected = match kind {
        IntrinsicKind::Real => IntrinsicKind::Imaginary,
        IntrinsicKind::Imaginary => IntrinsicKind::Real,
    };
    Err(TimeDomainError::KindMismatch { shape: shape.as_str(), expected: expected.as_str(), actual: kind.as_str() })
}

/// `∫σ₀ dt` on the grid, zero at `base_time` (or at the first sample when the base lies
/// outside the grid).
pub fn sigma_integral(r: &ReducedRCE, grid: &TimeGrid, base_time: f64) -> Result<Vec<f64>, EvalError> {
    let t = grid.times();
    let mut s = Vec::with_capacity(t.len());
    let mut ds = Vec::with_capacity(t.len());
    for ti in t {
        s.push(r.sigma0.value(*ti)?);
        ds.push(r.sigma0.derivative(*ti)?);
    }
    let acc = cumulative_hermite(t, &s, &ds);
    let offset = if grid.window().contains(base_time) { interpolate_with_derivative(t, &acc, &s, base_time) } else { 0.0 };
    Ok(acc.into_iter().map(|v| v - offset).collect())
}

/// `y = A·g·f(φ − K)` with its second state and the source-equation residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDomainSolution {
    pub shape: Shape,
    pub k: f64,
    pub amplitude: f64,
    pub base_time: f64,
    pub grid: TimeGrid,
    /// `e^{∫σ₀}/√ν_I`.
    pub envelope_g: Vec<f64>,
    pub y: Vec<f64>,
    pub x2: Vec<f64>,
    /// Largest normalized residual of `ÿ + r₁ẏ + r₀y` (see [`source_residual`]).
    pub residual: f64,
}

impl TimeDomainSolution {
    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    /// Pointwise residuals normalized by `max|y|·(1 + |r₀| + |r₁|)`.
    pub fn residual_samples(&self, r: &ReducedRCE) -> Result<Vec<f64>, EvalError> {
        source_residual_samples(r, self.grid.times(), &self.y)
    }
}

pub fn envelope_g(r: &ReducedRCE, pair: &PrimitivePair, base_time: f64) -> Result<Vec<f64>, EvalError> {
    let s = sigma_integral(r, &pair.grid, base_time)?;
    Ok(s.iter().zip(&pair.nu_i).map(|(s, ni)| s.exp() / ni.abs().sqrt()).collect())
}

pub fn reconstruct_time_domain(
    r: &ReducedRCE,
    pair: &PrimitivePair,
    phi: &PhaseAccumulator,
    shape: Shape,
    k: f64,
    amplitude: f64,
) -> Result<TimeDomainSolution, TimeDomainError> {
    check_kind(shape, pair.kind)?;
    let g = envelope_g(r, pair, phi.base_time)?;
    let k_used = if matches!(shape, Shape::ExpPlus | Shape::ExpMinus) { 0.0 } else { k };
    let t = pair.times();
    let mut y = Vec::with_capacity(t.len());
    let mut x2 = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        let (f, df) = shape.eval(phi.phi[i] - k_used);
        let yi = amplitude * g[i] * f;
        y.push(yi);
        x2.push((pair.nu_r[i] - r.alpha.value(t[i])?) * yi + amplitude * g[i] * pair.nu_i[i] * df);
    }
    let residual = source_residual(r, t, &y)?;
    Ok(TimeDomainSolution { shape, k, amplitude, base_time: phi.base_time, grid: pair.grid.clone(), envelope_g: g, y, x2, residual })
}

/// Time-domain solution whose logarithmic derivative is the dynamic eigenvalue of `member`.
pub fn reconstruct_member(
    r: &ReducedRCE,
    pair: &PrimitivePair,
    phi: &PhaseAccumulator,
    member: &FamilySolution,
    amplitude: f64,
) -> Result<TimeDomainSolution, TimeDomainError> {
    let m = member.rebased(phi);
    reconstruct_time_domain(r, pair, phi, Shape::of_branch(m.branch), m.k, amplitude)
}

/// `|ÿ + r₁ẏ + r₀y| / (max|y|·(1 + |r₀| + |r₁|))` per sample from centered 5-point
/// stencils. The two samples at each end, and samples whose stencil touches a non-finite
/// value, are reported as zero.
pub fn source_residual_samples(r: &ReducedRCE, times: &[f64], y: &[f64]) -> Result<Vec<f64>, EvalError> {
    let s = r.equivalent_scalar();
    let d1 = stencil_derivative(times, y, 1);
    let d2 = stencil_derivative(times, y, 2);
    let scale = y.iter().filter(|v| v.is_finite()).fold(0.0f64, |a, v| a.max(v.abs()));
    let n = times.len();
    let mut out = vec![0.0; n];
    if scale == 0.0 {
        return Ok(out);
    }
    for i in 2..n.saturating_sub(2) {
        if y[i - 2..=i + 2].iter().any(|v| !v.is_finite()) {
            continue;
        }
        let (r1, r0) = (s.r1.value(times[i])?, s.r0.value(times[i])?);
        out[i] = (d2[i] + r1 * d1[i] + r0 * y[i]).abs() / (scale * (1.0 + r0.abs() + r1.abs()));
    }
    Ok(out)
}

pub fn source_residual(r: &ReducedRCE, times: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    Ok(source_residual_samples(r, times, y)?.into_iter().fold(0.0, f64::max))
}

/// State Wronskian `y_a·x₂_b − y_b·x₂_a`.
pub fn wronskian(a: &TimeDomainSolution, b: &TimeDomainSolution) -> Vec<f64> {
    (0..a.y.len()).map(|i| a.y[i] * b.x2[i] - b.y[i] * a.x2[i]).collect()
}

/// Largest `|e^{∫λ}/(y/y(t₀)) − 1|` over the pole-free stretch following the first sample,
/// with `∫λ` by trapezoidal quadrature of the sampled eigenvalue.
pub fn eigen_integral_consistency(lambda: &DynamicEigenvalue, y: &TimeDomainSolution) -> f64 {
    let t = y.times();
    let end = lambda.lambda.iter().position(|v| !v.is_finite()).unwrap_or(t.len());
    if end < 2 || y.y[0] == 0.0 {
        return f64::NAN;
    }
    let integral = cumulative_integral(&t[..end], &lambda.lambda[..end]);
    (0..end).map(|i| (integral[i].exp() / (y.y[i] / y.y[0]) - 1.0).abs()).fold(0.0, f64::max)
}

/// `Φ(t) = V(t)·diag(e^{∫λ₁}, e^{∫λ₂})` with `V = [[1, 1], [ν₁ − α, ν₂ − α]]`, each
/// exponential normalized to one at `normalized_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    pub grid: TimeGrid,
    pub members: [FamilySolution; 2],
    pub v: Vec<[[f64; 2]; 2]>,
    pub exponents: Vec<[f64; 2]>,
    pub phi: Vec<[[f64; 2]; 2]>,
    pub normalized_at: f64,
}

fn det(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

impl FundamentalMatrix {
    pub fn determinant(&self) -> Vec<f64> {
        self.phi.iter().map(det).collect()
    }

    /// Largest relative deviation of `det Φ` from Abel's identity `det Φ(t₀)·e^{∫tr A}`.
    pub fn abel_deviation(&self, r: &ReducedRCE) -> Result<f64, EvalError> {
        let s = sigma_integral(r, &self.grid, self.normalized_at)?;
        let d = self.determinant();
        let i0 = self.grid.nearest_index(self.normalized_at);
        let d0 = d[i0] / (2.0 * s[i0]).exp();
        Ok(d.iter()
            .zip(&s)
            .filter(|(v, _)| v.is_finite())
            .map(|(v, s)| (v / (d0 * (2.0 * s).exp()) - 1.0).abs())
            .fold(0.0, f64::max))
    }

    /// Largest `‖Φ̇ − AΦ‖/(‖Φ‖(1 + ‖A‖))` with `Φ̇` from 5-point stencils.
    pub fn state_residual(&self, r: &ReducedRCE) -> Result<f64, EvalError> {
        let t = self.grid.times();
        let a = r.state_matrix();
        let mut worst: f64 = 0.0;
        let n = t.len();
        for col in 0..2 {
            for row in 0..2 {
                let series: Vec<f64> = self.phi.iter().map(|m| m[row][col]).collect();
                let d = stencil_derivative(t, &series, 1);
                for i in 0..n {
                    let (lo, hi) = (i.saturating_sub(2), (i + 2).min(n - 1));
                    if self.phi[lo..=hi].iter().any(|m| m.iter().flatten().any(|v| !v.is_finite())) {
                        continue;
                    }
                    let am = a.eval(t[i])?;
                    let p = &self.phi[i];
                    let rhs = am[row][0] * p[0][col] + am[row][1] * p[1][col];
                    let pn = p[0][col].abs().max(p[1][col].abs());
                    let an = am.iter().flatten().fold(0.0f64, |x, v| x.max(v.abs()));
                    if pn > 0.0 {
                        worst = worst.max((d[i] - rhs).abs() / (pn * (1.0 + an)));
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Fundamental matrix built from two members (the primitive pair by default).
pub fn fundamental_matrix(
    r: &ReducedRCE,
    pair: &PrimitivePair,
    phi: &PhaseAccumulator,
    members: Option<[FamilySolution; 2]>,
) -> Result<FundamentalMatrix, TimeDomainError> {
    let members = members.unwrap_or_else(|| match pair.kind {
        IntrinsicKind::Real => [FamilySolution::primitive_plus(phi.base_time), FamilySolution::primitive_minus(phi.base_time)],
        IntrinsicKind::Imaginary => {
            [FamilySolution::new(Branch::Cot, 0.0, phi.base_time), FamilySolution::new(Branch::Tan, 0.0, phi.base_time)]
        }
    });
    let t = pair.times();
    let i0 = pair.grid.nearest_index(phi.base_time);
    let mut cols = Vec::with_capacity(2);
    let mut nus = Vec::with_capacity(2);
    for m in &members {
        let sol = reconstruct_member(r, pair, phi, m, 1.0)?;
        let y0 = sol.y[i0];
        if y0 == 0.0 || !y0.is_finite() {
            return Err(TimeDomainError::ZeroAtBase { t: t[i0] });
        }
        nus.push((0..t.len()).map(|i| family_value(m, pair, phi, i)).collect::<Vec<_>>());
        cols.push((sol.y.iter().map(|v| v / y0).collect::<Vec<_>>(), sol.x2.iter().map(|v| v / y0).collect::<Vec<_>>()));
    }
    for i in 0..t.len() {
        if nus[0][i] == nus[1][i] {
            return Err(TimeDomainError::DegenerateColumns { t: t[i] });
        }
    }
    let mut v = Vec::with_capacity(t.len());
    let mut exponents = Vec::with_capacity(t.len());
    let mut phim = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        let a = r.alpha.value(t[i])?;
        v.push([[1.0, 1.0], [nus[0][i] - a, nus[1][i] - a]]);
        exponents.push([cols[0].0[i].abs().ln(), cols[1].0[i].abs().ln()]);
        phim.push([[cols[0].0[i], cols[1].0[i]], [cols[0].1[i], cols[1].1[i]]]);
    }
    Ok(FundamentalMatrix { grid: pair.grid.clone(), members, v, exponents, phi: phim, normalized_at: t[i0] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffexpr::CoefficientFn;
    use crate::family::phase_accumulator;
    use crate::grid::Window;
    use crate::reduction::{scalar_system_to_rce, ScalarSystem};

    fn oscillator(r0: &str, t1: f64, n: usize) -> (ReducedRCE, PrimitivePair, PhaseAccumulator) {
        let w = Window::new(0.0, t1).unwrap();
        let s = ScalarSystem::new(CoefficientFn::constant(0.0), CoefficientFn::parse(r0).unwrap());
        let r = scalar_system_to_rce(&s, &w).unwrap();
        let g = TimeGrid::uniform(0.0, t1, n).unwrap();
        let w2 = r.omega02.value(0.0).unwrap();
        let kind = if w2 > 0.0 { IntrinsicKind::Real } else { IntrinsicKind::Imaginary };
        let pair = PrimitivePair::new(g, vec![0.0; n], vec![w2.abs().sqrt(); n], kind).unwrap();
        let phi = phase_accumulator(&r, &pair, 0.0).unwrap();
        (r, pair, phi)
    }

    #[test]
    fn cosh_solves_y_dd_equals_4y() {
        let (r, pair, phi) = oscillator("-4", 2.0, 401);
        let sol = reconstruct_time_domain(&r, &pair, &phi, Shape::Cosh, 0.3, 1.0).unwrap();
        for (i, t) in pair.times().iter().enumerate() {
            let want = (2.0 * t - 0.3).cosh() / 2f64.sqrt();
            assert!((sol.y[i] - want).abs() < 1e-12 * want);
        }
        assert!(sol.residual < 1e-5, "{}", sol.residual);
    }

    #[test]
    fn fundamental_matrix_has_constant_determinant() {
        let (r, pair, phi) = oscillator("-4", 2.0, 201);
        let fm = fundamental_matrix(&r, &pair, &phi, None).unwrap();
        assert_eq!(fm.v[0], [[1.0, 1.0], [2.0, -2.0]]);
        for (i, t) in pair.times().iter().enumerate() {
            assert!((fm.phi[i][0][0] - (2.0 * t).exp()).abs() < 1e-12 * (2.0 * t).exp());
            assert!((fm.determinant()[i] + 4.0).abs() < 1e-12);
        }
        assert!(fm.abel_deviation(&r).unwrap() < 1e-12);
        assert!(fm.state_residual(&r).unwrap() < 1e-6);
    }

    #[test]
    fn sin_and_cos_are_independent() {
        let (r, pair, phi) = oscillator("4", 6.0, 601);
        let s = reconstruct_time_domain(&r, &pair, &phi, Shape::Sin, 0.0, 1.0).unwrap();
        let c = reconstruct_time_domain(&r, &pair, &phi, Shape::Cos, 0.0, 1.0).unwrap();
        assert!(s.residual < 1e-5 && c.residual < 1e-5, "{} {}", s.residual, c.residual);
        assert!(wronskian(&s, &c).iter().all(|w| (w + 1.0).abs() < 1e-12));
        assert!(reconstruct_time_domain(&r, &pair, &phi, Shape::Cosh, 0.0, 1.0).is_err());
    }

    #[test]
    fn eigenvalue_integral_reproduces_cosh() {
        let (r, pair, phi) = oscillator("-4", 2.0, 2001);
        let m = FamilySolution::new(Branch::Tanh, 0.5, 0.0);
        let (l1, l2) = dynamic_eigenvalues(&r, &pair, &phi, &m).unwrap();
        assert_eq!(l2.source.branch, Branch::Coth);
        let y = reconstruct_member(&r, &pair, &phi, &m, 1.0).unwrap();
        assert!(eigen_integral_consistency(&l1, &y) < 1e-6);
    }
}
