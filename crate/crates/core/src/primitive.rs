//! The primitive pair `ν_R ± ν_I` and the ways of finding it.
//!
//! For a real pair the primitive solutions are the attractor `ν_R + ν_I` and the separatrix
//! `ν_R − ν_I`. Decomposition uses the integration constant at the remote past for the
//! attractor and at the remote future for the separatrix; numerically these are approached
//! by extending the interval until the result stops changing. For an imaginary pair any
//! complex solution `ν_R + jν_Im` generates the whole real continuum.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffexpr::EvalError;
use crate::grid::{Direction, GridError, TimeGrid};
use crate::numerics::{chordal, chordal_real, cumulative_hermite, eig2, eigvec2, hermite, stencil_derivative, GL5_NODES, GL5_WEIGHTS};
use crate::odeengine::{
    integrate_rce, integrate_rce_from_pole, integrate_rce_polar_log, integrate_rce_projective, integrate_rce_recorded,
    integrate_system, IntegrateOptions, LiftField, OdeError, RceTrajectory, RealStart, Tolerance,
};
use crate::phaseportrait::{sign_predisposition, Predisposition};
use crate::reduction::ReducedRCE;

/// Attractor values, separatrix values and pole times.
type Rounds = (Vec<f64>, Vec<f64>, Vec<f64>);
type ProbeRun = (f64, Result<RceTrajectory, OdeError>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrimitiveError {
    #[error("every probe escaped without returning")]
    AllProbesEscaped,
    #[error("intrinsic relation residual {residual:.3e} exceeds {tolerance:.1e}; start the back-propagation further out")]
    ResidualTooLarge { residual: f64, tolerance: f64 },
    #[error("conjugate solution deviates by {deviation:.3e} under forward integration")]
    ConjugateMismatch { deviation: f64 },
    #[error("no complex guess available: ω₀₂({t}) = {omega02} is not negative")]
    NoComplexGuess { t: f64, omega02: f64 },
    #[error("the back-propagation guess must have a nonzero imaginary part")]
    RealGuess,
    #[error("decomposition did not settle after {rounds} extensions (last change {change:.3e})")]
    NotConverged { rounds: u32, change: f64 },
    #[error("monodromy has multipliers of equal modulus; no unique periodic primitive")]
    DegenerateMonodromy,
    #[error("intrinsic component vanishes at t = {t}")]
    ZeroIntrinsic { t: f64 },
    #[error("sample count mismatch: grid has {grid}, data has {data}")]
    LengthMismatch { grid: usize, data: usize },
    #[error("input is not a solution of the RCE (residual {residual:.3e})")]
    NotASolution { residual: f64 },
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Family(#[from] crate::family::FamilyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicKind {
    Real,
    Imaginary,
}

impl IntrinsicKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IntrinsicKind::Real => "real",
            IntrinsicKind::Imaginary => "imaginary",
        }
    }
}

/// Sampled primitive pair on a forward grid. For the imaginary kind `nu_i` holds `ν_Im`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitivePair {
    pub grid: TimeGrid,
    pub nu_r: Vec<f64>,
    pub nu_i: Vec<f64>,
    pub kind: IntrinsicKind,
    /// Pole times of either primitive solution inside the grid.
    pub poles: Vec<f64>,
}

fn forward(grid: &TimeGrid) -> TimeGrid {
    match grid.direction() {
        Direction::Forward => grid.clone(),
        Direction::Backward => grid.reversed(),
    }
}

impl PrimitivePair {
    pub fn new(grid: TimeGrid, nu_r: Vec<f64>, nu_i: Vec<f64>, kind: IntrinsicKind) -> Result<Self, PrimitiveError> {
        if nu_r.len() != grid.len() || nu_i.len() != grid.len() {
            return Err(PrimitiveError::LengthMismatch { grid: grid.len(), data: nu_r.len().min(nu_i.len()) });
        }
        let mut p = PrimitivePair { grid, nu_r, nu_i, kind, poles: Vec::new() };
        p.orient();
        Ok(p)
    }

    /// Real pair from the two primitive solutions sampled on the same grid.
    pub fn from_solutions(grid: TimeGrid, plus: &[f64], minus: &[f64], poles: Vec<f64>) -> Result<Self, PrimitiveError> {
        let nu_r = plus.iter().zip(minus).map(|(p, m)| half_sum(*p, *m)).collect();
        let nu_i = plus.iter().zip(minus).map(|(p, m)| half_sum(*p, -*m)).collect();
        let mut pair = PrimitivePair::new(grid, nu_r, nu_i, IntrinsicKind::Real)?;
        pair.poles = poles;
        Ok(pair)
    }

    /// Imaginary pair from one complex solution.
    pub fn from_complex(grid: TimeGrid, values: &[Complex64]) -> Result<Self, PrimitiveError> {
        let nu_r = values.iter().map(|v| v.re).collect();
        let nu_i = values.iter().map(|v| v.im.abs()).collect();
        PrimitivePair::new(grid, nu_r, nu_i, IntrinsicKind::Imaginary)
    }

    fn orient(&mut self) {
        if self.grid.direction() == Direction::Backward {
            self.grid = self.grid.reversed();
            self.nu_r.reverse();
            self.nu_i.reverse();
        }
        if let Some(first) = self.nu_i.iter().find(|v| v.is_finite() && **v != 0.0) {
            if *first < 0.0 {
                self.nu_i.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn has_poles(&self) -> bool {
        !self.poles.is_empty()
    }

    pub fn plus(&self, i: usize) -> Complex64 {
        match self.kind {
            IntrinsicKind::Real => Complex64::new(self.nu_r[i] + self.nu_i[i], 0.0),
            IntrinsicKind::Imaginary => Complex64::new(self.nu_r[i], self.nu_i[i]),
        }
    }

    pub fn minus(&self, i: usize) -> Complex64 {
        match self.kind {
            IntrinsicKind::Real => Complex64::new(self.nu_r[i] - self.nu_i[i], 0.0),
            IntrinsicKind::Imaginary => Complex64::new(self.nu_r[i], -self.nu_i[i]),
        }
    }

    pub fn plus_values(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.plus(i)).collect()
    }

    pub fn minus_values(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.minus(i)).collect()
    }

    /// Samples that are finite and at least five local steps away from any pole.
    pub fn regular_mask(&self) -> Vec<bool> {
        let t = self.times();
        let n = t.len();
        (0..n)
            .map(|i| {
                let h = if i == 0 {
                    t[1] - t[0]
                } else if i == n - 1 {
                    t[n - 1] - t[n - 2]
                } else {
                    (t[i + 1] - t[i]).max(t[i] - t[i - 1])
                };
                self.nu_r[i].is_finite()
                    && self.nu_i[i].is_finite()
                    && self.poles.iter().all(|p| (t[i] - p).abs() > 5.0 * h)
            })
            .collect()
    }

    /// Largest `|ν_R + ν̇_I/(2ω₀₁ν_I)| / (1 + |ν_R|)` over regular interior samples.
    pub fn intrinsic_residual(&self, r: &ReducedRCE) -> Result<f64, PrimitiveError> {
        let t = self.times();
        let log_i: Vec<f64> = self.nu_i.iter().map(|v| v.abs().ln()).collect();
        let dlog = stencil_derivative(t, &log_i, 1);
        let mask = self.regular_mask();
        let mut worst: f64 = 0.0;
        for i in 2..t.len().saturating_sub(2) {
            if !(mask[i - 2] && mask[i + 2] && mask[i]) {
                continue;
            }
            let w1 = r.omega01.value(t[i])?;
            let res = (self.nu_r[i] + dlog[i] / (2.0 * w1)).abs() / (1.0 + self.nu_r[i].abs());
            worst = worst.max(res);
        }
        Ok(worst)
    }

    /// Largest normalized RCE residual `|ν̇ − (−ω₀₁ν² + ω₀₂)| / (1 + |ν|²)` of both primitive
    /// solutions over regular interior samples.
    pub fn rce_residual(&self, r: &ReducedRCE) -> Result<f64, PrimitiveError> {
        let t = self.times();
        let mask = self.regular_mask();
        let mut worst: f64 = 0.0;
        for vals in [self.plus_values(), self.minus_values()] {
            let re: Vec<f64> = vals.iter().map(|v| v.re).collect();
            let im: Vec<f64> = vals.iter().map(|v| v.im).collect();
            let dre = stencil_derivative(t, &re, 1);
            let dim = stencil_derivative(t, &im, 1);
            for i in 2..t.len().saturating_sub(2) {
                if !(mask[i - 2] && mask[i + 2] && mask[i]) {
                    continue;
                }
                let f = r.rhs_complex(t[i], vals[i])?;
                let res = (Complex64::new(dre[i], dim[i]) - f).norm() / (1.0 + vals[i].norm_sqr());
                worst = worst.max(res);
            }
        }
        Ok(worst)
    }

    /// Smallest `|ν_I|` over regular samples.
    pub fn min_abs_intrinsic(&self) -> f64 {
        let mask = self.regular_mask();
        self.nu_i
            .iter()
            .zip(mask)
            .filter(|(_, m)| *m)
            .map(|(v, _)| v.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_intrinsic(&self) -> f64 {
        let mask = self.regular_mask();
        self.nu_i.iter().zip(mask).filter(|(_, m)| *m).map(|(v, _)| v.abs()).fold(0.0, f64::max)
    }

    /// Largest chordal distance between the primitive solutions of two pairs on the same grid.
    pub fn distance(&self, other: &PrimitivePair) -> f64 {
        (0..self.len().min(other.len()))
            .map(|i| chordal(self.plus(i), other.plus(i)).max(chordal(self.minus(i), other.minus(i))))
            .fold(0.0, f64::max)
    }
}

fn half_sum(a: f64, b: f64) -> f64 {
    if a.is_infinite() && b.is_finite() {
        a
    } else if b.is_infinite() && a.is_finite() {
        b
    } else {
        0.5 * (a + b)
    }
}

/// Intermediate quantities of the literal decomposition route, restricted to the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionScratch {
    /// `g(t) = ∫(−2ω₀₁)e^{−∫2ω₀₁ν}dt`, constant chosen so that `g = 2` at the remote past.
    pub g: Vec<f64>,
    /// Same integral for the attractor, vanishing at the remote future.
    pub g_p: Vec<f64>,
    pub k1_used: f64,
    pub t_pre: f64,
    pub t_post: f64,
}

const MAX_ROUNDS: u32 = 12;
const SETTLE: f64 = 1e-8;

fn barriers(r: &ReducedRCE) -> Vec<f64> {
    let mut b = r.singular_points();
    for c in [&r.omega01, &r.omega02] {
        let (lo, hi) = c.domain();
        b.extend([lo, hi].into_iter().filter(|v| v.is_finite()));
    }
    b
}

/// Interval end points used by extension round `k` (1-based).
fn extension(r: &ReducedRCE, grid: &TimeGrid, k: u32) -> (f64, f64) {
    let (lo, hi) = (grid.t0(), grid.t1());
    let span = hi - lo;
    let b = barriers(r);
    let below = b.iter().copied().filter(|x| *x < lo).fold(f64::NEG_INFINITY, f64::max);
    let above = b.iter().copied().filter(|x| *x > hi).fold(f64::INFINITY, f64::min);
    let pre = if below.is_finite() && lo - below < span * 2f64.powi(k as i32) {
        below + (lo - below) * 0.25f64.powi(k as i32)
    } else {
        lo - span * 2f64.powi(k as i32)
    };
    let post = if above.is_finite() && above - hi < span * 2f64.powi(k as i32) {
        above - (above - hi) * 0.25f64.powi(k as i32)
    } else {
        hi + span * 2f64.powi(k as i32)
    };
    (pre, post)
}

fn decomposition_options() -> IntegrateOptions {
    IntegrateOptions { tol: Tolerance::new(1e-11, 1e-13), ..IntegrateOptions::default() }
}

fn prepend(t: f64, grid: &TimeGrid) -> Result<TimeGrid, GridError> {
    let mut times = Vec::with_capacity(grid.len() + 1);
    times.push(t);
    times.extend_from_slice(grid.times());
    TimeGrid::new(times)
}

/// Attractor (forward from a pole at `t_pre`) and separatrix (backward from a pole at
/// `t_post`) on the forward grid.
fn regularized_round(
    r: &ReducedRCE,
    grid: &TimeGrid,
    t_pre: f64,
    t_post: f64,
    opts: &IntegrateOptions,
) -> Result<Rounds, PrimitiveError> {
    let fwd = integrate_rce_from_pole(r, &prepend(t_pre, grid)?, opts)?;
    let bwd = integrate_rce_from_pole(r, &prepend(t_post, &grid.reversed())?, opts)?;
    let plus: Vec<f64> = fwd.values[1..].iter().map(|v| v.re).collect();
    let mut minus: Vec<f64> = bwd.values[1..].iter().map(|v| v.re).collect();
    minus.reverse();
    let w = grid.window();
    let mut poles: Vec<f64> = fwd
        .escape_events
        .iter()
        .chain(&bwd.escape_events)
        .map(|e| e.t_escape)
        .filter(|t| w.contains(*t))
        .collect();
    poles.sort_by(f64::total_cmp);
    Ok((plus, minus, poles))
}

fn sup_chordal(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| chordal_real(*x, *y)).fold(0.0, f64::max)
}

/// Real pair by extending the pole-started primitive solutions until they settle.
fn decompose_regularized(r: &ReducedRCE, grid: &TimeGrid) -> Result<PrimitivePair, PrimitiveError> {
    let opts = decomposition_options();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut change = f64::INFINITY;
    for k in 1..=MAX_ROUNDS {
        let (pre, post) = extension(r, grid, k);
        let (plus, minus, poles) = regularized_round(r, grid, pre, post, &opts)?;
        if let Some((pp, pm)) = &prev {
            change = sup_chordal(&plus, pp).max(sup_chordal(&minus, pm));
            if change <= SETTLE {
                return PrimitivePair::from_solutions(grid.clone(), &plus, &minus, poles);
            }
        }
        prev = Some((plus, minus));
    }
    Err(PrimitiveError::NotConverged { rounds: MAX_ROUNDS, change })
}

/// Complex solution through the sample of smallest `|ν|`, with imaginary part taken from the
/// frozen-coefficient fixed point there.
fn decompose_imaginary(r: &ReducedRCE, grid: &TimeGrid, nu: &[f64]) -> Result<PrimitivePair, PrimitiveError> {
    let t = grid.times();
    let a = (0..nu.len())
        .filter(|&i| nu[i].is_finite())
        .min_by(|&i, &j| nu[i].abs().total_cmp(&nu[j].abs()))
        .unwrap_or(0);
    let anchor = if nu[a].is_finite() { nu[a] } else { 0.0 };
    let w1 = r.omega01.value(t[a])?;
    let w2 = r.omega02.value(t[a])?;
    let kappa = if w2 < 0.0 { (-w2 / w1).sqrt() } else { anchor.abs().max(1.0) };
    let tol = decomposition_options().tol;
    let mut values = vec![Complex64::new(0.0, 0.0); t.len()];
    values[a] = Complex64::new(anchor, kappa);
    if a + 1 < t.len() {
        let g = TimeGrid::new(t[a..].to_vec())?;
        let s = integrate_rce_polar_log(r, anchor, kappa.ln(), &g, tol)?;
        for (k, st) in s.iter().enumerate() {
            values[a + k] = Complex64::new(st[0], st[1].exp());
        }
    }
    if a > 0 {
        let mut back: Vec<f64> = t[..=a].to_vec();
        back.reverse();
        let s = integrate_rce_polar_log(r, anchor, kappa.ln(), &TimeGrid::new(back)?, tol)?;
        for (k, st) in s.iter().enumerate() {
            values[a - k] = Complex64::new(st[0], st[1].exp());
        }
    }
    PrimitivePair::from_complex(grid.clone(), &values)
}

/// Decomposes a known RCE solution into its primitive pair.
///
/// The real pair does not depend on which member of the continuum is supplied: the
/// solution only fixes the grid. For the imaginary kind it also fixes the anchor of the
/// complex integration constant.
pub fn decompose_to_primitive(
    r: &ReducedRCE,
    grid: &TimeGrid,
    nu: &[f64],
    kind_hint: IntrinsicKind,
) -> Result<PrimitivePair, PrimitiveError> {
    if nu.len() != grid.len() {
        return Err(PrimitiveError::LengthMismatch { grid: grid.len(), data: nu.len() });
    }
    let (g, values) = match grid.direction() {
        Direction::Forward => (grid.clone(), nu.to_vec()),
        Direction::Backward => (grid.reversed(), nu.iter().rev().copied().collect()),
    };
    match kind_hint {
        IntrinsicKind::Real => decompose_regularized(r, &g),
        IntrinsicKind::Imaginary => decompose_imaginary(r, &g, &values),
    }
}

struct Extended {
    times: Vec<f64>,
    nu: Vec<f64>,
    lo: usize,
    hi: usize,
}

fn extend_solution(
    r: &ReducedRCE,
    grid: &TimeGrid,
    nu: &[f64],
    t_pre: f64,
    t_post: f64,
) -> Result<Option<Extended>, PrimitiveError> {
    let mut opts = decomposition_options();
    opts.max_step = Some(grid.window().span() / 50.0);
    let n = nu.len();
    let back = match integrate_rce_recorded(r, RealStart::Value(nu[0]), grid.t0(), t_pre, &opts) {
        Ok(b) => b,
        Err(_) => return Ok(None),
    };
    let ahead = match integrate_rce_recorded(r, RealStart::Value(nu[n - 1]), grid.t1(), t_post, &opts) {
        Ok(a) => a,
        Err(_) => return Ok(None),
    };
    let clean = |tr: &RceTrajectory| tr.escape_events.is_empty() && tr.values.iter().all(|v| v.re.is_finite());
    if !clean(&back) || !clean(&ahead) {
        return Ok(None);
    }
    let mut times: Vec<f64> = back.grid.times()[1..].iter().rev().copied().collect();
    let mut vals: Vec<f64> = back.values[1..].iter().rev().map(|v| v.re).collect();
    let lo = times.len();
    times.extend_from_slice(grid.times());
    vals.extend_from_slice(nu);
    let hi = times.len() - 1;
    times.extend_from_slice(&ahead.grid.times()[1..]);
    vals.extend(ahead.values[1..].iter().map(|v| v.re));
    Ok(Some(Extended { times, nu: vals, lo, hi }))
}

/// `∫ ω₀₁(s) e^{Φ(anchor) − Φ(s)} ds` over `[a, b]`, with `Φ` the cubic Hermite interpolant
/// through `Φ(a) = 0`, `Φ(b) = dphi` and slopes `fa`, `fb`.
fn weighted_step(r: &ReducedRCE, a: f64, b: f64, dphi: f64, fa: f64, fb: f64, anchor: f64) -> Result<f64, PrimitiveError> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut sum = 0.0;
    for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
        let s = mid + half * x;
        let phi = hermite(a, b, 0.0, dphi, fa, fb, s);
        sum += w * r.omega01.value(s)? * (anchor - phi).exp();
    }
    Ok(half * sum)
}

/// `2ω₀₁ν` and its time derivative along a solution.
fn phase_rate(r: &ReducedRCE, t: &[f64], nu: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PrimitiveError> {
    let mut f = Vec::with_capacity(t.len());
    let mut df = Vec::with_capacity(t.len());
    for (ti, v) in t.iter().zip(nu) {
        let w1 = r.omega01.value(*ti)?;
        let dw1 = r.omega01.derivative(*ti)?;
        let dv = r.rhs(*ti, *v)?;
        f.push(2.0 * w1 * v);
        df.push(2.0 * (dw1 * v + w1 * dv));
    }
    Ok((f, df))
}

/// One round of the literal route: returns (attractor, intrinsic, g, g_p) on the window.
fn quadrature_round(r: &ReducedRCE, ext: &Extended) -> Result<[Vec<f64>; 4], PrimitiveError> {
    let t = &ext.times;
    let n = t.len();
    let (f, df) = phase_rate(r, t, &ext.nu)?;
    let phi = cumulative_hermite(t, &f, &df);
    // J = e^{Φ} ∫_{t_pre}^{t} (−2ω₀₁) e^{−Φ}, so that ν_p = ν − 2/J.
    let mut j = vec![0.0; n];
    for k in 0..n - 1 {
        let d = phi[k + 1] - phi[k];
        let piece = weighted_step(r, t[k], t[k + 1], d, f[k], f[k + 1], d)?;
        j[k + 1] = d.exp() * j[k] - 2.0 * piece;
    }
    let nu_p: Vec<f64> = (0..n).map(|k| if k == 0 { f64::INFINITY } else { ext.nu[k] - 2.0 / j[k] }).collect();
    // L = 2 e^{Ψ} ∫_{t}^{t_post} ω₀₁ e^{−Ψ}, so that ν_I = 1/L.
    let lo = ext.lo;
    let tail = &t[lo..];
    let (fp, dfp) = phase_rate(r, tail, &nu_p[lo..])?;
    let psi = cumulative_hermite(tail, &fp, &dfp);
    let m = tail.len();
    let mut l = vec![0.0; m];
    for k in (0..m - 1).rev() {
        let d = psi[k + 1] - psi[k];
        let piece = weighted_step(r, tail[k], tail[k + 1], d, fp[k], fp[k + 1], 0.0)?;
        l[k] = (-d).exp() * l[k + 1] + 2.0 * piece;
    }
    let w = ext.hi - lo + 1;
    let attractor = nu_p[lo..=ext.hi].to_vec();
    let intrinsic: Vec<f64> = l[..w].iter().map(|x| 1.0 / x).collect();
    let phi0 = phi[lo];
    let g: Vec<f64> = (lo..=ext.hi).map(|k| 2.0 + (-(phi[k] - phi0)).exp() * j[k]).collect();
    let g_p: Vec<f64> = (0..w).map(|k| -(-psi[k]).exp() * l[k]).collect();
    Ok([attractor, intrinsic, g, g_p])
}

/// Literal decomposition by nested quadrature along an extension of the given solution.
/// Phase integrals between grid samples use a cubic Hermite interpolant, so accuracy is
/// fourth order in the grid spacing. Returns `None` when the extension meets a pole, in which case only the regularized route
/// of [`decompose_to_primitive`] applies.
pub fn decompose_by_quadrature(
    r: &ReducedRCE,
    grid: &TimeGrid,
    nu: &[f64],
) -> Result<Option<(PrimitivePair, DecompositionScratch)>, PrimitiveError> {
    if nu.len() != grid.len() {
        return Err(PrimitiveError::LengthMismatch { grid: grid.len(), data: nu.len() });
    }
    if grid.direction() == Direction::Backward || nu.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut change = f64::INFINITY;
    for k in 1..=MAX_ROUNDS {
        let (pre, post) = extension(r, grid, k);
        let Some(ext) = extend_solution(r, grid, nu, pre, post)? else {
            return Ok(None);
        };
        let [att, intr, g, g_p] = quadrature_round(r, &ext)?;
        let minus: Vec<f64> = att.iter().zip(&intr).map(|(a, i)| a - 2.0 * i).collect();
        if let Some((pa, pm)) = &prev {
            change = sup_chordal(&att, pa).max(sup_chordal(&minus, pm));
            if change <= SETTLE {
                let pair = PrimitivePair::from_solutions(grid.clone(), &att, &minus, Vec::new())?;
                let scratch = DecompositionScratch { g, g_p, k1_used: -2.0, t_pre: pre, t_post: post };
                return Ok(Some((pair, scratch)));
            }
        }
        prev = Some((att, minus));
    }
    Err(PrimitiveError::NotConverged { rounds: MAX_ROUNDS, change })
}

/// Outcome of a forward attractor search.
#[derive(Debug, Clone)]
pub struct ForwardSearch {
    pub pair: Option<PrimitivePair>,
    pub probes: Vec<(f64, Result<RceTrajectory, OdeError>)>,
}

impl ForwardSearch {
    pub fn has_attractor(&self) -> bool {
        self.pair.is_some()
    }
}

/// Probe initial conditions spread around the frozen fixed points at the grid start.
pub fn default_probes(r: &ReducedRCE, t0: f64) -> Result<Vec<f64>, PrimitiveError> {
    let s = (r.omega02.value(t0)? / r.omega01.value(t0)?).abs().sqrt().max(1.0);
    Ok(vec![-3.0 * s, -s, 0.0, s, 3.0 * s])
}

/// Integrates every probe forward and returns them with the index of a trajectory that
/// another probe joins over the trailing 20% of the window (chordal distance ≤ 1e-6).
pub fn detect_attractor(
    r: &ReducedRCE,
    probes: &[f64],
    grid: &TimeGrid,
    opts: &IntegrateOptions,
) -> Result<(Vec<ProbeRun>, Option<usize>), PrimitiveError> {
    let grid = forward(grid);
    let runs: Vec<ProbeRun> = probes
        .par_iter()
        .map(|ic| (*ic, integrate_rce(r, Complex64::new(*ic, 0.0), &grid, opts)))
        .collect();
    if runs.iter().all(|(_, res)| res.is_err()) {
        return Err(PrimitiveError::AllProbesEscaped);
    }
    let t = grid.times();
    let start = t.partition_point(|&s| s < t[t.len() - 1] - 0.2 * (t[t.len() - 1] - t[0]));
    let ok: Vec<(usize, &RceTrajectory)> = runs.iter().enumerate().filter_map(|(k, (_, r))| r.as_ref().ok().map(|r| (k, r))).collect();
    let mut hit = None;
    'outer: for a in 0..ok.len() {
        for b in a + 1..ok.len() {
            let d = (start..t.len()).map(|i| chordal(ok[a].1.values[i], ok[b].1.values[i])).fold(0.0, f64::max);
            if d <= 1e-6 {
                hit = Some(ok[a].0);
                break 'outer;
            }
        }
    }
    Ok((runs, hit))
}

/// Forward attractor search: a converged cluster of probes is the attractor, whose pair is
/// then obtained by decomposition.
pub fn find_primitive_forward(
    r: &ReducedRCE,
    probes: &[f64],
    grid: &TimeGrid,
    opts: &IntegrateOptions,
) -> Result<ForwardSearch, PrimitiveError> {
    let grid = forward(grid);
    let (runs, hit) = detect_attractor(r, probes, &grid, opts)?;
    let pair = match hit {
        Some(k) => {
            let tr = runs[k].1.as_ref().expect("attractor run succeeded");
            Some(decompose_to_primitive(r, &grid, &tr.real_values(), IntrinsicKind::Real)?)
        }
        None => None,
    };
    Ok(ForwardSearch { pair, probes: runs })
}

/// Imaginary pair by integrating a complex guess backward from `t_far` across the grid.
/// Without a guess the frozen fixed point `j·√(−ω₀₂/ω₀₁)` at `t_far` is used.
pub fn find_primitive_backward(
    r: &ReducedRCE,
    guess: Option<Complex64>,
    t_far: f64,
    grid: &TimeGrid,
    tol: Tolerance,
) -> Result<PrimitivePair, PrimitiveError> {
    let grid = forward(grid);
    let guess = match guess {
        Some(g) => g,
        None => {
            let w2 = r.omega02.value(t_far)?;
            if w2 >= 0.0 {
                return Err(PrimitiveError::NoComplexGuess { t: t_far, omega02: w2 });
            }
            Complex64::new(0.0, (-w2 / r.omega01.value(t_far)?).sqrt())
        }
    };
    if guess.im == 0.0 || !guess.is_finite() {
        return Err(PrimitiveError::RealGuess);
    }
    let prepended = t_far - grid.t1() > 1e-10 * (1.0 + t_far.abs());
    let back_grid = if prepended { prepend(t_far, &grid.reversed())? } else { grid.reversed() };
    let states = integrate_rce_polar_log(r, guess.re, guess.im.abs().ln(), &back_grid, tol)?;
    let skip = usize::from(prepended);
    let mut nu_r: Vec<f64> = states[skip..].iter().map(|s| s[0]).collect();
    let mut nu_i: Vec<f64> = states[skip..].iter().map(|s| s[1].exp()).collect();
    nu_r.reverse();
    nu_i.reverse();
    certify_imaginary(r, PrimitivePair::new(grid, nu_r, nu_i, IntrinsicKind::Imaginary)?, tol)
}

fn certify_imaginary(r: &ReducedRCE, pair: PrimitivePair, tol: Tolerance) -> Result<PrimitivePair, PrimitiveError> {
    let residual = pair.intrinsic_residual(r)?;
    if residual > 1e-5 {
        return Err(PrimitiveError::ResidualTooLarge { residual, tolerance: 1e-5 });
    }
    let deviation = conjugate_deviation(r, &pair, tol)?;
    if deviation > 1e-5 {
        return Err(PrimitiveError::ConjugateMismatch { deviation });
    }
    Ok(pair)
}

/// Imaginary pair from a complex guess at an interior time, propagated forward and
/// backward from `t_anchor` to both ends of the grid.
pub fn find_primitive_from_anchor(
    r: &ReducedRCE,
    guess: Complex64,
    t_anchor: f64,
    grid: &TimeGrid,
    tol: Tolerance,
) -> Result<PrimitivePair, PrimitiveError> {
    let grid = forward(grid);
    if guess.im == 0.0 || !guess.is_finite() {
        return Err(PrimitiveError::RealGuess);
    }
    let t = grid.times();
    let split = t.partition_point(|&s| s < t_anchor);
    let guess = if guess.im < 0.0 { guess.conj() } else { guess };
    let run = |times: Vec<f64>| -> Result<Vec<[f64; 2]>, PrimitiveError> {
        if times.len() < 2 {
            return Ok(Vec::new());
        }
        let g = TimeGrid::new(times)?;
        Ok(integrate_rce_polar_log(r, guess.re, guess.im.ln(), &g, tol)?)
    };
    let mut ahead = vec![t_anchor];
    ahead.extend(t[split..].iter().copied().filter(|&s| s > t_anchor));
    let mut behind = vec![t_anchor];
    behind.extend(t[..split].iter().rev().copied());
    let fwd = run(ahead)?;
    let back = run(behind)?;
    let anchor_on_grid = split < t.len() && t[split] == t_anchor;
    let mut states: Vec<[f64; 2]> = back.iter().skip(1).rev().copied().collect();
    if anchor_on_grid {
        states.push([guess.re, guess.im.ln()]);
    }
    states.extend(fwd.iter().skip(1));
    let nu_r = states.iter().map(|s| s[0]).collect();
    let nu_i = states.iter().map(|s| s[1].exp()).collect();
    certify_imaginary(r, PrimitivePair::new(grid, nu_r, nu_i, IntrinsicKind::Imaginary)?, tol)
}

/// Forward-integrates the conjugate primitive from the first sample with `ω₀₂ < 0` and
/// returns its largest deviation from the stored conjugate, relative to `1 + |ν|`.
pub fn conjugate_deviation(r: &ReducedRCE, pair: &PrimitivePair, tol: Tolerance) -> Result<f64, PrimitiveError> {
    let t = pair.times();
    let mut start = 0;
    for (i, ti) in t.iter().enumerate() {
        if r.omega02.value(*ti)? < 0.0 {
            start = i;
            break;
        }
    }
    if start + 1 >= t.len() {
        return Ok(0.0);
    }
    let g = TimeGrid::new(t[start..].to_vec())?;
    let opts = IntegrateOptions { tol, ..IntegrateOptions::default() };
    let tr = integrate_rce(r, pair.minus(start), &g, &opts)?;
    Ok(tr
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let c = pair.minus(start + k);
            (v.re - c.re).abs() / (1.0 + c.norm()) + ((v.im / c.im).ln()).abs()
        })
        .fold(0.0, f64::max))
}

/// Monodromy over `[t0, t0 + period]` of the lift `u̇ = ω₀₁v`, `v̇ = ω₀₂u`, whose ratio
/// `v/u` solves the RCE.
pub fn lift_monodromy(r: &ReducedRCE, t0: f64, period: f64) -> Result<[[f64; 2]; 2], PrimitiveError> {
    let times = [t0, t0 + period];
    let tol = Tolerance::new(1e-12, 1e-14);
    let c1 = integrate_system(&LiftField(r), [1.0, 0.0], &times, tol)?[1];
    let c2 = integrate_system(&LiftField(r), [0.0, 1.0], &times, tol)?[1];
    Ok([[c1[0], c2[0]], [c1[1], c2[1]]])
}

/// Periodic primitive pair of a `period`-periodic RCE, from the eigenvectors of the lift
/// monodromy at the grid start. Real multipliers give the periodic attractor and separatrix;
/// complex multipliers give the periodic complex solution with positive imaginary part.
pub fn find_primitive_periodic(
    r: &ReducedRCE,
    period: f64,
    grid: &TimeGrid,
    opts: &IntegrateOptions,
) -> Result<PrimitivePair, PrimitiveError> {
    let grid = forward(grid);
    if let Some(pair) = frozen_pair(r, &grid) {
        return pair;
    }
    let t0 = grid.t0();
    let m = lift_monodromy(r, t0, period)?;
    let mu = eig2(&m);
    if mu[0].im.abs() > 1e-12 * mu[0].norm() {
        let (u, v) = eigvec2(&m, mu[0]);
        let mut nu0 = v / u;
        if nu0.im < 0.0 {
            nu0 = nu0.conj();
        }
        let s = integrate_rce_polar_log(r, nu0.re, nu0.im.ln(), &grid, opts.tol)?;
        let values: Vec<Complex64> = s.iter().map(|st| Complex64::new(st[0], st[1].exp())).collect();
        return PrimitivePair::from_complex(grid, &values);
    }
    let (big, small) = if mu[0].norm() >= mu[1].norm() { (mu[0], mu[1]) } else { (mu[1], mu[0]) };
    if (big.norm() - small.norm()).abs() <= 1e-9 * big.norm() {
        return Err(PrimitiveError::DegenerateMonodromy);
    }
    let (ua, va) = eigvec2(&m, Complex64::new(big.re, 0.0));
    let att = integrate_rce_projective(r, ua.re, va.re, &grid, opts)?;
    let periods = ((grid.t1() - t0) / period - 1e-9).ceil().max(1.0);
    let t_end = t0 + periods * period;
    let back_grid = if t_end > grid.t1() + 1e-12 * (1.0 + t_end.abs()) {
        prepend(t_end, &grid.reversed())?
    } else {
        grid.reversed()
    };
    let (us, vs) = eigvec2(&m, Complex64::new(small.re, 0.0));
    let sep = integrate_rce_projective(r, us.re, vs.re, &back_grid, opts)?;
    let skip = sep.values.len() - grid.len();
    let mut minus: Vec<f64> = sep.values[skip..].iter().map(|v| v.re).collect();
    minus.reverse();
    let w = grid.window();
    let mut poles: Vec<f64> = att
        .escape_events
        .iter()
        .chain(&sep.escape_events)
        .map(|e| e.t_escape)
        .filter(|t| w.contains(*t))
        .collect();
    poles.sort_by(f64::total_cmp);
    PrimitivePair::from_solutions(grid, &att.real_values(), &minus, poles)
}

/// The exact pair `0 ± √|ω₀₂/ω₀₁|` when both coefficients are constant.
fn frozen_pair(r: &ReducedRCE, grid: &TimeGrid) -> Option<Result<PrimitivePair, PrimitiveError>> {
    let (w1, w2) = (r.omega01.as_constant()?, r.omega02.as_constant()?);
    let ratio = w2 / w1;
    if ratio == 0.0 {
        return Some(Err(PrimitiveError::DegenerateMonodromy));
    }
    let kind = if ratio > 0.0 { IntrinsicKind::Real } else { IntrinsicKind::Imaginary };
    let n = grid.len();
    Some(PrimitivePair::new(grid.clone(), vec![0.0; n], vec![ratio.abs().sqrt(); n], kind))
}

/// Finds the primitive pair without a kind hint. Constant coefficients give the frozen pair.
/// With `ω₀₁ω₀₂ > 0` on the whole window the pair is real and is decomposed from the solution
/// through `ν = 0`; with `ω₀₁ω₀₂ < 0` it is imaginary and back-propagated from the grid end.
/// Otherwise forward probes decide, with back-propagation when no attractor appears.
pub fn find_primitive(r: &ReducedRCE, grid: &TimeGrid, opts: &IntegrateOptions) -> Result<PrimitivePair, PrimitiveError> {
    let g = forward(grid);
    if let Some(pair) = frozen_pair(r, &g) {
        return pair;
    }
    match sign_predisposition(r, &g.window())? {
        Predisposition::StableCapable => {
            let tr = integrate_rce(r, Complex64::new(0.0, 0.0), &g, opts)?;
            return decompose_to_primitive(r, &g, &tr.real_values(), IntrinsicKind::Real);
        }
        Predisposition::EscapePredisposed => return find_primitive_backward(r, None, g.t1(), &g, opts.tol),
        Predisposition::Mixed => {}
    }
    let probes = default_probes(r, g.t0())?;
    let search = find_primitive_forward(r, &probes, &g, opts)?;
    match search.pair {
        Some(p) => Ok(p),
        None => find_primitive_backward(r, None, g.t1(), &g, opts.tol),
    }
}

/// Kind of the primitive pair implied by a forward search.
pub fn resolve_kind(r: &ReducedRCE, grid: &TimeGrid, opts: &IntegrateOptions) -> Result<IntrinsicKind, PrimitiveError> {
    let g = forward(grid);
    let probes = default_probes(r, g.t0())?;
    let (_, hit) = detect_attractor(r, &probes, &g, opts)?;
    Ok(if hit.is_some() { IntrinsicKind::Real } else { IntrinsicKind::Imaginary })
}

/// The member complementary to `nu1`: same `K`, the other branch of the pair. For a
/// primitive `nu1` this is `nu1 − 2ν_I`.
pub fn complementary_of(r: &ReducedRCE, nu1: &[f64], pair: &PrimitivePair) -> Result<Vec<f64>, PrimitiveError> {
    if nu1.len() != pair.len() {
        return Err(PrimitiveError::LengthMismatch { grid: pair.len(), data: nu1.len() });
    }
    let t = pair.times();
    let worst = crate::family::rce_residual(r, t, nu1)?;
    if worst > 1e-4 {
        return Err(PrimitiveError::NotASolution { residual: worst });
    }
    let phi = crate::family::phase_accumulator(r, pair, t[0])?;
    let i0 = (0..nu1.len()).find(|&i| nu1[i].is_finite()).unwrap_or(0);
    let member = crate::family::fit_branch_and_k(pair, &phi, nu1[i0], t[i0]).map_err(|_| PrimitiveError::NotASolution { residual: worst })?;
    let other = member.complement();
    Ok((0..t.len()).map(|i| crate::family::family_value(&other, pair, &phi, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffexpr::CoefficientFn;
    use crate::grid::Window;
    use crate::reduction::{reduce_general_riccati, GeneralRiccati};

    fn riccati(s0: &str, w: Window) -> ReducedRCE {
        let c = |s: &str| CoefficientFn::parse(s).unwrap();
        reduce_general_riccati(&GeneralRiccati { s2: c("-1"), s1: c("0"), s0: c(s0) }, &w).unwrap()
    }

    #[test]
    fn constant_case_decomposes_to_plus_minus_two() {
        let w = Window::new(0.0, 4.0).unwrap();
        let r = riccati("4", w);
        let g = TimeGrid::uniform(0.0, 4.0, 401).unwrap();
        let nu: Vec<f64> = g.times().iter().map(|t| 2.0 * (2.0 * t - 1.0).tanh()).collect();
        let pair = decompose_to_primitive(&r, &g, &nu, IntrinsicKind::Real).unwrap();
        for i in 0..g.len() {
            assert!(pair.nu_r[i].abs() < 1e-8 && (pair.nu_i[i] - 2.0).abs() < 1e-8);
        }
        let (qpair, scratch) = decompose_by_quadrature(&r, &g, &nu).unwrap().unwrap();
        assert!(qpair.distance(&pair) < 1e-7, "{}", qpair.distance(&pair));
        assert_eq!(scratch.k1_used, -2.0);
        assert!(scratch.g.iter().chain(&scratch.g_p).all(|v| v.is_finite()));
    }

    #[test]
    fn polynomial_case_decomposes() {
        let w = Window::new(0.5, 10.0).unwrap();
        let r = riccati("2/t^2", w);
        let g = TimeGrid::uniform(0.5, 10.0, 191).unwrap();
        let nu: Vec<f64> = g.times().iter().map(|t| (2.0 * t.powi(3) - 1.0) / (t * (t.powi(3) + 1.0))).collect();
        let pair = decompose_to_primitive(&r, &g, &nu, IntrinsicKind::Real).unwrap();
        for (i, t) in g.times().iter().enumerate() {
            assert!((pair.nu_r[i] - 0.5 / t).abs() < 1e-6, "{} {}", t, pair.nu_r[i]);
            assert!((pair.nu_i[i] - 1.5 / t).abs() < 1e-6);
        }
        let fine = TimeGrid::uniform(0.5, 10.0, 951).unwrap();
        let nu: Vec<f64> = fine.times().iter().map(|t| (2.0 * t.powi(3) - 1.0) / (t * (t.powi(3) + 1.0))).collect();
        let pair = decompose_to_primitive(&r, &fine, &nu, IntrinsicKind::Real).unwrap();
        let (qpair, _) = decompose_by_quadrature(&r, &fine, &nu).unwrap().unwrap();
        assert!(qpair.distance(&pair) < 1e-6, "{}", qpair.distance(&pair));
        assert!(pair.intrinsic_residual(&r).unwrap() < 1e-6);
    }

    #[test]
    fn forward_search_finds_constant_attractor() {
        let r = riccati("4", Window::new(0.0, 10.0).unwrap());
        let g = TimeGrid::uniform(0.0, 10.0, 201).unwrap();
        let s = find_primitive_forward(&r, &[0.0, 1.0, 5.0], &g, &IntegrateOptions::default()).unwrap();
        let p = s.pair.unwrap();
        assert!(p.nu_r.iter().all(|v| v.abs() < 1e-8));
        assert!(p.nu_i.iter().all(|v| (v - 2.0).abs() < 1e-8));
    }

    #[test]
    fn backward_search_constant_imaginary() {
        let r = riccati("-4", Window::new(0.0, 10.0).unwrap());
        let g = TimeGrid::uniform(0.0, 10.0, 101).unwrap();
        let p = find_primitive_backward(&r, Some(Complex64::new(0.0, 2.0)), 10.0, &g, Tolerance::default()).unwrap();
        assert_eq!(p.kind, IntrinsicKind::Imaginary);
        assert!(p.nu_r.iter().all(|v| v.abs() < 1e-12));
        assert!(p.nu_i.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let s = find_primitive_forward(&r, &[0.0, 1.0, -1.0], &g, &IntegrateOptions::default()).unwrap();
        assert!(!s.has_attractor());
    }

    #[test]
    fn complementary_of_primitive_is_separatrix() {
        let r = riccati("4", Window::new(0.0, 4.0).unwrap());
        let g = TimeGrid::uniform(0.0, 4.0, 81).unwrap();
        let pair = PrimitivePair::new(g.clone(), vec![0.0; 81], vec![2.0; 81], IntrinsicKind::Real).unwrap();
        let c = complementary_of(&r, &vec![2.0; 81], &pair).unwrap();
        assert!(c.iter().all(|v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn periodic_finder_matches_constant_pair() {
        let r = riccati("4", Window::new(0.0, 6.0).unwrap());
        let g = TimeGrid::uniform(0.0, 6.0, 61).unwrap();
        let p = find_primitive_periodic(&r, 1.0, &g, &IntegrateOptions::default()).unwrap();
        assert_eq!(p.kind, IntrinsicKind::Real);
        assert!(p.nu_i.iter().all(|v| (v - 2.0).abs() < 1e-8));
        let r2 = riccati("-4", Window::new(0.0, 6.0).unwrap());
        let p2 = find_primitive_periodic(&r2, 1.0, &g, &IntegrateOptions::default()).unwrap();
        assert_eq!(p2.kind, IntrinsicKind::Imaginary);
        assert!(p2.nu_i.iter().all(|v| (v - 2.0).abs() < 1e-8));
    }
}
