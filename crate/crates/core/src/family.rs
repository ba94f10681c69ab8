//! The continuum of RCE solutions generated by a primitive pair.
//!
//! Real pairs give `ν_R + ν_I·tanh(φ_f − K)` and `ν_R + ν_I·coth(φ_f − K)`; imaginary pairs
//! give `ν_R − ν_Im·tan(φ_fm − K)` and `ν_R + ν_Im·cot(φ_fm − K)`. `K` is measured against
//! the phase accumulator's base time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffexpr::EvalError;
use crate::grid::TimeGrid;
use crate::numerics::{cumulative_hermite, interpolate_with_derivative, stencil_derivative};
use crate::primitive::{IntrinsicKind, PrimitivePair};
use crate::reduction::ReducedRCE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("t = {t} is not a grid sample")]
    OffGrid { t: f64 },
    #[error("base time {t} lies outside the grid")]
    BaseOutsideGrid { t: f64 },
    #[error("branch {branch} does not belong to a {kind} pair")]
    KindMismatch { branch: &'static str, kind: &'static str },
    #[error("initial value must not be NaN")]
    NanInitialValue,
    #[error("{data} samples for a grid of {grid}")]
    LengthMismatch { grid: usize, data: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// `φ_f = ∫ω₀₁ν_I dt` (or `φ_fm` for the imaginary kind), zero at `base_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAccumulator {
    pub grid: TimeGrid,
    pub phi: Vec<f64>,
    /// `ω₀₁ν_I`, the derivative of `phi`.
    pub rate: Vec<f64>,
    pub base_time: f64,
    pub kind: IntrinsicKind,
}

impl PhaseAccumulator {
    /// Interpolated phase at any `t` inside the grid.
    pub fn at(&self, t: f64) -> f64 {
        match self.grid.index_of(t) {
            Some(i) => self.phi[i],
            None => interpolate_with_derivative(self.grid.times(), &self.phi, &self.rate, t),
        }
    }

    /// Same phase with a new base: every sample shifts by `−φ(new_base)`.
    pub fn rebased(&self, new_base: f64) -> Result<Self, FamilyError> {
        if !self.grid.window().contains(new_base) {
            return Err(FamilyError::BaseOutsideGrid { t: new_base });
        }
        Ok(self.shifted(-self.at(new_base), new_base))
    }

    /// Adds `delta` to every sample and records `base_time`. Used when the base lies off the
    /// grid and the phase there is known separately.
    pub fn shifted(&self, delta: f64, base_time: f64) -> Self {
        let mut out = self.clone();
        out.phi.iter_mut().for_each(|p| *p += delta);
        out.base_time = base_time;
        out
    }
}

pub fn phase_accumulator(r: &ReducedRCE, pair: &PrimitivePair, base_time: f64) -> Result<PhaseAccumulator, FamilyError> {
    let t = pair.times();
    let mut rate = Vec::with_capacity(t.len());
    let mut drate = Vec::with_capacity(t.len());
    for (i, ti) in t.iter().enumerate() {
        let w1 = r.omega01.value(*ti)?;
        let dw1 = r.omega01.derivative(*ti)?;
        let (nr, ni) = (pair.nu_r[i], pair.nu_i[i]);
        let dni = -2.0 * w1 * ni * nr;
        rate.push(w1 * ni);
        drate.push(dw1 * ni + w1 * dni);
    }
    let phi = cumulative_hermite(t, &rate, &drate);
    let acc = PhaseAccumulator { grid: pair.grid.clone(), phi, rate, base_time: t[0], kind: pair.kind };
    acc.rebased(base_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Tanh,
    Coth,
    Tan,
    Cot,
    PrimitivePlus,
    PrimitiveMinus,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Tanh => "tanh",
            Branch::Coth => "coth",
            Branch::Tan => "tan",
            Branch::Cot => "cot",
            Branch::PrimitivePlus => "primitive_plus",
            Branch::PrimitiveMinus => "primitive_minus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Branch::Tanh, Branch::Coth, Branch::Tan, Branch::Cot, Branch::PrimitivePlus, Branch::PrimitiveMinus]
            .into_iter()
            .find(|b| b.as_str() == s)
    }

    pub fn fits(self, kind: IntrinsicKind) -> bool {
        match self {
            Branch::Tanh | Branch::Coth | Branch::PrimitivePlus | Branch::PrimitiveMinus => kind == IntrinsicKind::Real,
            Branch::Tan | Branch::Cot => kind == IntrinsicKind::Imaginary,
        }
    }

    pub fn complement(self) -> Branch {
        match self {
            Branch::Tanh => Branch::Coth,
            Branch::Coth => Branch::Tanh,
            Branch::Tan => Branch::Cot,
            Branch::Cot => Branch::Tan,
            Branch::PrimitivePlus => Branch::PrimitiveMinus,
            Branch::PrimitiveMinus => Branch::PrimitivePlus,
        }
    }
}

/// One member of the continuum. Primitive branches carry `K = ∓∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySolution {
    pub branch: Branch,
    pub k: f64,
    pub base_time: f64,
}

impl FamilySolution {
    pub fn new(branch: Branch, k: f64, base_time: f64) -> Self {
        FamilySolution { branch, k, base_time }
    }

    pub fn primitive_plus(base_time: f64) -> Self {
        FamilySolution { branch: Branch::PrimitivePlus, k: f64::NEG_INFINITY, base_time }
    }

    pub fn primitive_minus(base_time: f64) -> Self {
        FamilySolution { branch: Branch::PrimitiveMinus, k: f64::INFINITY, base_time }
    }

    /// Complementary member: same `K`, other branch.
    pub fn complement(&self) -> Self {
        let k = match self.branch {
            Branch::PrimitivePlus | Branch::PrimitiveMinus => -self.k,
            _ => self.k,
        };
        FamilySolution { branch: self.branch.complement(), k, base_time: self.base_time }
    }

    /// `C` of the rational form `(2t³ − C)/(t(t³ + C))`: `e^{2K}` on tanh, `−e^{2K}` on coth.
    pub fn c_constant(&self) -> Option<f64> {
        match self.branch {
            Branch::Tanh => Some((2.0 * self.k).exp()),
            Branch::Coth => Some(-(2.0 * self.k).exp()),
            Branch::PrimitivePlus => Some(0.0),
            _ => None,
        }
    }

    /// Constant `K₀` of `ν_R − ν_I (e^{−2φ} − K₀)/(e^{−2φ} + K₀)`: `e^{−2K}` on tanh and
    /// `−e^{−2K}` on coth.
    pub fn k0(&self) -> Option<f64> {
        match self.branch {
            Branch::Tanh => Some((-2.0 * self.k).exp()),
            Branch::Coth => Some(-(-2.0 * self.k).exp()),
            Branch::PrimitiveMinus => Some(0.0),
            Branch::PrimitivePlus => Some(f64::INFINITY),
            _ => None,
        }
    }

    /// The same member with `K` measured against `phi`'s base time.
    pub fn rebased(&self, phi: &PhaseAccumulator) -> Self {
        if self.base_time == phi.base_time || !self.k.is_finite() {
            return FamilySolution { base_time: phi.base_time, ..*self };
        }
        FamilySolution { k: self.k + phi.at(self.base_time), base_time: phi.base_time, ..*self }
    }
}

/// Branch function value at phase argument `x = φ − K`.
fn branch_fn(branch: Branch, x: f64) -> f64 {
    match branch {
        Branch::Tanh => x.tanh(),
        Branch::Coth => 1.0 / x.tanh(),
        Branch::Tan => -x.tan(),
        Branch::Cot => 1.0 / x.tan(),
        Branch::PrimitivePlus => 1.0,
        Branch::PrimitiveMinus => -1.0,
    }
}

/// Member value at sample `i`; infinite at a branch pole and NaN on a kind mismatch.
pub fn family_value(f: &FamilySolution, pair: &PrimitivePair, phi: &PhaseAccumulator, i: usize) -> f64 {
    if !f.branch.fits(pair.kind) {
        return f64::NAN;
    }
    let f = f.rebased(phi);
    pair.nu_r[i] + pair.nu_i[i] * branch_fn(f.branch, phi.phi[i] - f.k)
}

/// Member value at grid time `t`. A non-finite result marks an escape sample.
pub fn family_eval(f: &FamilySolution, pair: &PrimitivePair, phi: &PhaseAccumulator, t: f64) -> Result<f64, FamilyError> {
    if !f.branch.fits(pair.kind) {
        return Err(FamilyError::KindMismatch { branch: f.branch.as_str(), kind: pair.kind.as_str() });
    }
    let i = pair.grid.index_of(t).ok_or(FamilyError::OffGrid { t })?;
    Ok(family_value(f, pair, phi, i))
}

pub fn family_trajectory(f: &FamilySolution, pair: &PrimitivePair, phi: &PhaseAccumulator) -> Vec<f64> {
    (0..pair.len()).map(|i| family_value(f, pair, phi, i)).collect()
}

/// Branch and `K` reproducing `ic_value` at grid time `ic_time`.
pub fn fit_branch_and_k(
    pair: &PrimitivePair,
    phi: &PhaseAccumulator,
    ic_value: f64,
    ic_time: f64,
) -> Result<FamilySolution, FamilyError> {
    if ic_value.is_nan() {
        return Err(FamilyError::NanInitialValue);
    }
    let i = pair.grid.index_of(ic_time).ok_or(FamilyError::OffGrid { t: ic_time })?;
    let p = phi.phi[i];
    let base = phi.base_time;
    if ic_value.is_infinite() {
        let branch = if pair.kind == IntrinsicKind::Real { Branch::Coth } else { Branch::Cot };
        return Ok(FamilySolution::new(branch, p, base));
    }
    let u = (ic_value - pair.nu_r[i]) / pair.nu_i[i];
    Ok(match pair.kind {
        IntrinsicKind::Real => {
            if (u.abs() - 1.0).abs() <= 1e-12 {
                if u > 0.0 {
                    FamilySolution::primitive_plus(base)
                } else {
                    FamilySolution::primitive_minus(base)
                }
            } else if u.abs() < 1.0 {
                FamilySolution::new(Branch::Tanh, p - u.atanh(), base)
            } else {
                FamilySolution::new(Branch::Coth, p - (1.0 / u).atanh(), base)
            }
        }
        IntrinsicKind::Imaginary => FamilySolution::new(Branch::Cot, p - 1.0f64.atan2(u), base),
    })
}

/// Member reproducing a whole sampled solution, fitted at the sample where `K` is best
/// conditioned: largest `|1 − u²|` for the real kind, smallest `|u|` for the imaginary kind,
/// with `u = (ν − ν_R)/ν_I`.
pub fn fit_trajectory(pair: &PrimitivePair, phi: &PhaseAccumulator, nu: &[f64]) -> Result<FamilySolution, FamilyError> {
    if nu.len() != pair.len() {
        return Err(FamilyError::LengthMismatch { grid: pair.len(), data: nu.len() });
    }
    let score = |i: usize| {
        let u = (nu[i] - pair.nu_r[i]) / pair.nu_i[i];
        match pair.kind {
            IntrinsicKind::Real => (1.0 - u * u).abs(),
            IntrinsicKind::Imaginary => 1.0 / (1.0 + u * u),
        }
    };
    let best = (0..nu.len())
        .filter(|&i| nu[i].is_finite())
        .max_by(|&a, &b| score(a).total_cmp(&score(b)))
        .ok_or(FamilyError::NanInitialValue)?;
    fit_branch_and_k(pair, phi, nu[best], pair.times()[best])
}

/// General intrinsic component `ν_Ix = ν_I (tanh − coth)/2` of the complementary pair
/// containing `f` (trigonometric analogue for the imaginary kind).
pub fn member_intrinsic(f: &FamilySolution, pair: &PrimitivePair, phi: &PhaseAccumulator) -> Vec<f64> {
    let a = family_trajectory(f, pair, phi);
    let b = family_trajectory(&f.complement(), pair, phi);
    a.iter().zip(&b).map(|(x, y)| 0.5 * (x - y)).collect()
}

/// `ν_R − ν_I (e^{−2φ} − K₀)/(e^{−2φ} + K₀)` evaluated stably at sample `i`.
pub fn k0_form(pair: &PrimitivePair, phi: &PhaseAccumulator, k0: f64, i: usize) -> f64 {
    if k0.is_infinite() {
        return pair.nu_r[i] + pair.nu_i[i];
    }
    let e = (-2.0 * phi.phi[i]).exp();
    pair.nu_r[i] - pair.nu_i[i] * (e - k0) / (e + k0)
}

/// A solution of the unreduced Riccati equation, `z = η + ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralZSolution {
    pub family: FamilySolution,
    pub z: Vec<f64>,
    pub residual: f64,
}

/// Builds `z = η + ν` and checks it against `ż = −ω₀₁z² + 2ω₀₁ηz + ω₀₂ − ω₀₁η² + η̇`, the
/// Riccati equation whose reduction is `r`.
pub fn general_z_solution(
    r: &ReducedRCE,
    f: &FamilySolution,
    pair: &PrimitivePair,
    phi: &PhaseAccumulator,
) -> Result<GeneralZSolution, FamilyError> {
    let t = pair.times();
    let nu = family_trajectory(f, pair, phi);
    let mut z = Vec::with_capacity(t.len());
    for (ti, v) in t.iter().zip(&nu) {
        z.push(r.eta.value(*ti)? + v);
    }
    let residual = rce_residual(r, t, &nu)?;
    Ok(GeneralZSolution { family: *f, z, residual })
}

/// Largest normalized residual `|ν̇ − (−ω₀₁ν² + ω₀₂)| / (1 + ν²)` of a sampled real solution,
/// with derivatives from centered 5-point stencils. The same quantity is also measured on
/// `w = 1/ν`, as `|ẇ − (ω₀₁ − ω₀₂w²)| / (1 + w²)`, and the smaller estimate is kept: the
/// `ν` stencil degrades next to poles and the `w` stencil next to zeros of `ν`.
pub fn rce_residual(r: &ReducedRCE, times: &[f64], nu: &[f64]) -> Result<f64, EvalError> {
    let n = times.len();
    let w: Vec<f64> = nu.iter().map(|v| 1.0 / v).collect();
    let dnu = stencil_derivative(times, nu, 1);
    let dw = stencil_derivative(times, &w, 1);
    let mut worst: f64 = 0.0;
    for i in 2..n.saturating_sub(2) {
        let (w1, w2) = (r.omega01.value(times[i])?, r.omega02.value(times[i])?);
        let mut res = f64::INFINITY;
        if nu[i - 2..=i + 2].iter().all(|v| v.is_finite()) {
            res = (dnu[i] - (-w1 * nu[i] * nu[i] + w2)).abs() / (1.0 + nu[i] * nu[i]);
        }
        if w[i - 2..=i + 2].iter().all(|v| v.is_finite()) {
            res = res.min((dw[i] - (w1 - w2 * w[i] * w[i])).abs() / (1.0 + w[i] * w[i]));
        }
        if res.is_finite() {
            worst = worst.max(res);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_pair(n: usize, t1: f64) -> PrimitivePair {
        let g = TimeGrid::uniform(0.0, t1, n).unwrap();
        PrimitivePair::new(g, vec![0.0; n], vec![2.0; n], IntrinsicKind::Real).unwrap()
    }

    fn phi_of(pair: &PrimitivePair) -> PhaseAccumulator {
        let rate: Vec<f64> = pair.nu_i.clone();
        let phi = pair.times().iter().map(|t| 2.0 * t).collect();
        PhaseAccumulator { grid: pair.grid.clone(), phi, rate, base_time: 0.0, kind: pair.kind }
    }

    #[test]
    fn tanh_member_value() {
        let pair = constant_pair(101, 1.0);
        let phi = phi_of(&pair);
        let f = FamilySolution::new(Branch::Tanh, 0.0, 0.0);
        assert!((family_eval(&f, &pair, &phi, 1.0).unwrap() - 1.928_055_160_151_634_5).abs() < 1e-12);
    }

    #[test]
    fn fits_follow_the_trichotomy() {
        let pair = constant_pair(11, 1.0);
        let phi = phi_of(&pair);
        let f = fit_branch_and_k(&pair, &phi, 0.0, 0.0).unwrap();
        assert_eq!((f.branch, f.k), (Branch::Tanh, 0.0));
        let f = fit_branch_and_k(&pair, &phi, 3.0, 0.0).unwrap();
        assert_eq!(f.branch, Branch::Coth);
        assert!((f.k + 0.5 * 5f64.ln()).abs() < 1e-12);
        let f = fit_branch_and_k(&pair, &phi, -3.0, 0.0).unwrap();
        assert!((f.k - 0.5 * 5f64.ln()).abs() < 1e-12);
        assert_eq!(fit_branch_and_k(&pair, &phi, 2.0, 0.0).unwrap().branch, Branch::PrimitivePlus);
        assert_eq!(fit_branch_and_k(&pair, &phi, -2.0, 0.0).unwrap().branch, Branch::PrimitiveMinus);
    }

    #[test]
    fn fit_reproduces_initial_value() {
        let pair = constant_pair(11, 1.0);
        let phi = phi_of(&pair);
        for ic in [-7.0, -2.5, -1.0, 0.3, 1.99, 5.0] {
            let f = fit_branch_and_k(&pair, &phi, ic, 0.5).unwrap();
            assert!((family_eval(&f, &pair, &phi, 0.5).unwrap() - ic).abs() < 1e-10);
        }
    }

    #[test]
    fn imaginary_fit_uses_cot() {
        let g = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let pair = PrimitivePair::new(g, vec![0.0; 11], vec![2.0; 11], IntrinsicKind::Imaginary).unwrap();
        let phi = phi_of(&pair);
        for ic in [-3.0, 0.0, 4.0] {
            let f = fit_branch_and_k(&pair, &phi, ic, 0.3).unwrap();
            assert_eq!(f.branch, Branch::Cot);
            assert!((family_eval(&f, &pair, &phi, 0.3).unwrap() - ic).abs() < 1e-10);
            let tan = FamilySolution::new(Branch::Tan, f.k - std::f64::consts::FRAC_PI_2, f.base_time);
            assert!((family_eval(&tan, &pair, &phi, 0.7).unwrap() - family_eval(&f, &pair, &phi, 0.7).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn rebasing_shifts_k() {
        let pair = constant_pair(11, 1.0);
        let phi = phi_of(&pair);
        let moved = phi.rebased(0.5).unwrap();
        let f = FamilySolution::new(Branch::Tanh, 0.2, 0.0);
        let g = f.rebased(&moved);
        assert!((g.k - (0.2 - 1.0)).abs() < 1e-12);
        assert!((family_value(&f, &pair, &phi, 7) - family_value(&g, &pair, &moved, 7)).abs() < 1e-12);
    }

    #[test]
    fn k0_bridge() {
        let pair = constant_pair(11, 1.0);
        let phi = phi_of(&pair);
        for f in [FamilySolution::new(Branch::Tanh, 0.4, 0.0), FamilySolution::new(Branch::Coth, -0.3, 0.0)] {
            for i in 0..11 {
                let a = family_value(&f, &pair, &phi, i);
                let b = k0_form(&pair, &phi, f.k0().unwrap(), i);
                assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
            }
        }
    }
}
