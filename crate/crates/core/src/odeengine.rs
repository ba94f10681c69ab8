//! Adaptive Dormand–Prince 5(4) integration of the RCE with pole continuation.
//!
//! Real trajectories switch to the reciprocal variable `w = 1/ν` (`ẇ = ω₀₁ − ω₀₂w²`) once
//! `|ν|` exceeds the escape cap, integrate `w` through zero and switch back. Complex
//! trajectories are integrated in the polar-like state `(Re ν, ln |Im ν|)`, which keeps the
//! imaginary part from changing sign and stays accurate when it is tiny.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffexpr::EvalError;
use crate::grid::{GridError, TimeGrid};
use crate::numerics::bisect;
use crate::reduction::{ReducedRCE, StateMatrix2x2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rtol: 1e-9, atol: 1e-12 }
    }
}

impl Tolerance {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Tolerance { rtol, atol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolePolicy {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub tol: Tolerance,
    /// `|ν|` above which the reciprocal variable takes over.
    pub escape_cap: f64,
    /// `|ν|` above which a sample is reported as an escape sample.
    pub report_cap: f64,
    pub policy: PolePolicy,
    pub max_steps: usize,
    /// Upper bound on the step size, mainly for step-recorded trajectories.
    pub max_step: Option<f64>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: Tolerance::default(),
            escape_cap: 1e6,
            report_cap: 1e12,
            policy: PolePolicy::Continue,
            max_steps: 20_000_000,
            max_step: None,
        }
    }
}

impl IntegrateOptions {
    pub fn with_tol(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h}) away from a pole")]
    StepUnderflow { t: f64, h: f64 },
    #[error("coefficient evaluation failed at t = {t}: {source}")]
    Coefficient { t: f64, source: EvalError },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("pole without return near t = {t}: the reciprocal variable did not cross zero")]
    PoleWithoutReturn { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
    #[error("initial condition must be finite")]
    InvalidInitialCondition,
    #[error("trajectory was not truncated at a pole")]
    NotTruncated,
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn coef(t: f64) -> impl Fn(EvalError) -> OdeError {
    move |source| OdeError::Coefficient { t, source }
}

/// A first-order system `ẏ = f(t, y)` with `N` real states.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> Result<[f64; N], OdeError>;
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub(crate) struct Step<const N: usize> {
    pub y: [f64; N],
    pub k_end: [f64; N],
    pub err: f64,
}

/// One Dormand–Prince step of signed size `h`; `err` is the scaled RMS error estimate.
pub(crate) fn dp_step<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    tol: Tolerance,
) -> Result<Step<N>, OdeError> {
    let mut k = [[0.0; N]; 7];
    k[0] = *k1;
    for s in 1..7 {
        let mut ys = *y;
        for (i, v) in ys.iter_mut().enumerate() {
            for j in 0..s {
                *v += h * A[s][j] * k[j][i];
            }
        }
        k[s] = sys.rhs(t + C[s] * h, &ys)?;
    }
    let mut y_new = *y;
    for (i, v) in y_new.iter_mut().enumerate() {
        for j in 0..6 {
            *v += h * A[6][j] * k[j][i];
        }
    }
    let mut acc = 0.0;
    for i in 0..N {
        let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * h;
        let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
        acc += (e / sc) * (e / sc);
    }
    let err = (acc / N as f64).sqrt();
    if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
        return Ok(Step { y: y_new, k_end: k[6], err: f64::INFINITY });
    }
    Ok(Step { y: y_new, k_end: k[6], err })
}

fn rms_scaled<const N: usize>(v: &[f64; N], y: &[f64; N], tol: Tolerance) -> f64 {
    let s: f64 = (0..N).map(|i| (v[i] / (tol.atol + tol.rtol * y[i].abs())).powi(2)).sum();
    (s / N as f64).sqrt()
}

fn initial_step<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    span: f64,
    tol: Tolerance,
) -> Result<f64, OdeError> {
    let d0 = rms_scaled(y, y, tol);
    let d1 = rms_scaled(f0, y, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let mut y1 = *y;
    for i in 0..N {
        y1[i] += dir * h0 * f0[i];
    }
    let f1 = sys.rhs(t + dir * h0, &y1)?;
    let mut df = [0.0; N];
    for i in 0..N {
        df[i] = f1[i] - f0[i];
    }
    let d2 = rms_scaled(&df, y, tol) / h0;
    let m = d1.max(d2);
    let h1 = if m <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / m).powf(0.2) };
    Ok((100.0 * h0).min(h1).min(span).max(1e-12 * (1.0 + t.abs())))
}

struct Controller {
    err_prev: f64,
}

impl Controller {
    fn accept_factor(&mut self, err: f64) -> f64 {
        let fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.17) * self.err_prev.powf(0.04) };
        self.err_prev = err.max(1e-4);
        fac.clamp(0.2, 5.0)
    }

    fn reject_factor(err: f64) -> f64 {
        (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
    }
}

fn underflow(t: f64, h: f64) -> bool {
    h.abs() < 1e-14 * t.abs().max(1.0)
}

/// Integrates a general system, returning the state at every time in `times`.
pub fn integrate_system<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    y0: [f64; N],
    times: &[f64],
    tol: Tolerance,
) -> Result<Vec<[f64; N]>, OdeError> {
    let mut out = Vec::with_capacity(times.len());
    out.push(y0);
    if times.len() < 2 {
        return Ok(out);
    }
    let dir = (times[times.len() - 1] - times[0]).signum();
    let span = (times[times.len() - 1] - times[0]).abs();
    let mut t = times[0];
    let mut y = y0;
    let mut k1 = sys.rhs(t, &y)?;
    let mut h = dir * initial_step(sys, t, &y, &k1, dir, span, tol)?;
    let mut ctl = Controller { err_prev: 1e-4 };
    for &target in &times[1..] {
        let mut guard = 0usize;
        while (target - t) * dir > 0.0 {
            guard += 1;
            if guard > 50_000_000 {
                return Err(OdeError::TooManySteps { t });
            }
            let remaining = target - t;
            let clipped = h.abs() >= remaining.abs() * (1.0 - 1e-9);
            let hs = if clipped { remaining } else { h };
            if underflow(t, hs) && !clipped {
                return Err(OdeError::StepUnderflow { t, h: hs });
            }
            let st = dp_step(sys, t, &y, &k1, hs, tol)?;
            if st.err > 1.0 {
                h = hs * Controller::reject_factor(st.err);
                continue;
            }
            t = if clipped { target } else { t + hs };
            y = st.y;
            k1 = st.k_end;
            let fac = ctl.accept_factor(st.err);
            h = if clipped { h.abs().max(hs.abs() * fac).copysign(dir) } else { hs * fac };
        }
        out.push(y);
    }
    Ok(out)
}

struct DirectField<'a>(&'a ReducedRCE);
struct ReciprocalField<'a>(&'a ReducedRCE);
struct PolarField<'a>(&'a ReducedRCE);

impl OdeSystem<1> for DirectField<'_> {
    fn rhs(&self, t: f64, y: &[f64; 1]) -> Result<[f64; 1], OdeError> {
        let w1 = self.0.omega01.value(t).map_err(coef(t))?;
        let w2 = self.0.omega02.value(t).map_err(coef(t))?;
        Ok([-w1 * y[0] * y[0] + w2])
    }
}

impl OdeSystem<1> for ReciprocalField<'_> {
    fn rhs(&self, t: f64, y: &[f64; 1]) -> Result<[f64; 1], OdeError> {
        let w1 = self.0.omega01.value(t).map_err(coef(t))?;
        let w2 = self.0.omega02.value(t).map_err(coef(t))?;
        Ok([w1 - w2 * y[0] * y[0]])
    }
}

impl OdeSystem<2> for PolarField<'_> {
    fn rhs(&self, t: f64, y: &[f64; 2]) -> Result<[f64; 2], OdeError> {
        let w1 = self.0.omega01.value(t).map_err(coef(t))?;
        let w2 = self.0.omega02.value(t).map_err(coef(t))?;
        let im2 = (2.0 * y[1]).exp();
        Ok([-w1 * (y[0] * y[0] - im2) + w2, -2.0 * w1 * y[0]])
    }
}

/// How the value at a sample was carried by the integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableTag {
    Direct,
    Reciprocal,
    Polar,
}

impl VariableTag {
    pub fn as_str(self) -> &'static str {
        match self {
            VariableTag::Direct => "direct",
            VariableTag::Reciprocal => "reciprocal",
            VariableTag::Polar => "polar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(VariableTag::Direct),
            "reciprocal" => Some(VariableTag::Reciprocal),
            "polar" => Some(VariableTag::Polar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    fn of(x: f64) -> Sign {
        if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }
}

/// A pole of a real RCE solution, with the sign of `ν` on either side in forward time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeEvent {
    pub t_escape: f64,
    pub left_sign: Sign,
    pub right_sign: Sign,
    /// Width of the final bisection bracket.
    pub bracket: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeSwitch {
    pub t: f64,
    pub to: VariableTag,
    /// `ν·w` at the handoff, 1 up to rounding.
    pub handoff_product: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub t: f64,
    pub nu: f64,
    pub h: f64,
    /// First grid sample not yet reached.
    pub next_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Sampled RCE solution. `values` may be shorter than the grid when integration stopped at
/// a pole under [`PolePolicy::Stop`].
#[derive(Debug, Clone, PartialEq)]
pub struct RceTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<Complex64>,
    pub tags: Vec<VariableTag>,
    pub escape_events: Vec<EscapeEvent>,
    pub switches: Vec<ModeSwitch>,
    pub truncated: Option<Truncation>,
    pub stats: StepStats,
    pub report_cap: f64,
}

impl RceTrajectory {
    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.grid.times()[..self.values.len()]
    }

    pub fn is_complex(&self) -> bool {
        self.tags.contains(&VariableTag::Polar)
    }

    /// True where `|ν|` exceeds the report cap (a sample numerically at a pole).
    pub fn is_escape_sample(&self, i: usize) -> bool {
        let m = self.values[i].norm();
        m.is_nan() || m > self.report_cap
    }

    pub fn last(&self) -> Complex64 {
        self.values[self.values.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RealStart {
    Value(f64),
    /// Start in the reciprocal variable `w = 1/ν`; `w = 0` is a pole.
    Reciprocal(f64),
}

#[derive(Clone, Copy)]
enum Mode {
    Direct,
    Reciprocal,
}

struct RealRun {
    times: Vec<f64>,
    values: Vec<f64>,
    tags: Vec<VariableTag>,
    events: Vec<EscapeEvent>,
    switches: Vec<ModeSwitch>,
    truncated: Option<Truncation>,
    stats: StepStats,
}

fn real_value(mode: Mode, x: f64) -> (f64, VariableTag) {
    match mode {
        Mode::Direct => (x, VariableTag::Direct),
        Mode::Reciprocal => (if x == 0.0 { f64::INFINITY } else { 1.0 / x }, VariableTag::Reciprocal),
    }
}

fn step_mode(r: &ReducedRCE, mode: Mode, t: f64, x: f64, k1: f64, h: f64, tol: Tolerance) -> Result<Step<1>, OdeError> {
    match mode {
        Mode::Direct => dp_step(&DirectField(r), t, &[x], &[k1], h, tol),
        Mode::Reciprocal => dp_step(&ReciprocalField(r), t, &[x], &[k1], h, tol),
    }
}

fn rhs_mode(r: &ReducedRCE, mode: Mode, t: f64, x: f64) -> Result<f64, OdeError> {
    Ok(match mode {
        Mode::Direct => DirectField(r).rhs(t, &[x])?[0],
        Mode::Reciprocal => ReciprocalField(r).rhs(t, &[x])?[0],
    })
}

/// Core real-valued driver. With `record_steps` every accepted step is reported, otherwise
/// only the samples in `times`.
fn run_real(
    r: &ReducedRCE,
    start: RealStart,
    times: &[f64],
    opts: &IntegrateOptions,
    record_steps: bool,
) -> Result<RealRun, OdeError> {
    let dir = (times[times.len() - 1] - times[0]).signum();
    let span = (times[times.len() - 1] - times[0]).abs();
    let cap = opts.escape_cap;
    let tol = opts.tol;
    let (mut mode, mut x) = match start {
        RealStart::Reciprocal(w) => (Mode::Reciprocal, w),
        RealStart::Value(v) if v.abs() > cap => (Mode::Reciprocal, 1.0 / v),
        RealStart::Value(v) => (Mode::Direct, v),
    };
    let mut t = times[0];
    let mut run = RealRun {
        times: vec![t],
        values: Vec::new(),
        tags: Vec::new(),
        events: Vec::new(),
        switches: Vec::new(),
        truncated: None,
        stats: StepStats::default(),
    };
    let (v0, tag0) = real_value(mode, x);
    run.values.push(v0);
    run.tags.push(tag0);
    let mut k1 = rhs_mode(r, mode, t, x)?;
    let field_h = match mode {
        Mode::Direct => initial_step(&DirectField(r), t, &[x], &[k1], dir, span, tol)?,
        Mode::Reciprocal => initial_step(&ReciprocalField(r), t, &[x], &[k1], dir, span, tol)?,
    };
    let max_step = opts.max_step.unwrap_or(f64::INFINITY);
    let mut h = dir * field_h.min(max_step);
    let mut ctl = Controller { err_prev: 1e-4 };
    // (entry time, time budget) while in reciprocal mode after a cap crossing.
    let mut recip_watch: Option<(f64, f64)> = None;
    let mut steps = 0usize;

    for (idx, &target) in times.iter().enumerate().skip(1) {
        while (target - t) * dir > 0.0 {
            steps += 1;
            if steps > opts.max_steps {
                return Err(OdeError::TooManySteps { t });
            }
            let remaining = target - t;
            if h.abs() > max_step {
                h = max_step.copysign(dir);
            }
            let clipped = h.abs() >= remaining.abs() * (1.0 - 1e-9);
            let hs = if clipped { remaining } else { h };
            if underflow(t, hs) && !clipped {
                return Err(OdeError::StepUnderflow { t, h: hs });
            }
            let st = step_mode(r, mode, t, x, k1, hs, tol)?;
            if st.err > 1.0 {
                run.stats.rejected += 1;
                h = hs * Controller::reject_factor(st.err);
                continue;
            }
            run.stats.accepted += 1;
            let t_new = if clipped { target } else { t + hs };
            let x_new = st.y[0];
            let mut k_next = st.k_end[0];
            match mode {
                Mode::Direct => {
                    if !x_new.is_finite() {
                        return Err(OdeError::NonFinite { t: t_new });
                    }
                    if x_new.abs() > cap {
                        if opts.policy == PolePolicy::Stop {
                            run.truncated = Some(Truncation { t: t_new, nu: x_new, h: hs, next_index: idx });
                            return Ok(run);
                        }
                        let w = 1.0 / x_new;
                        run.switches.push(ModeSwitch { t: t_new, to: VariableTag::Reciprocal, handoff_product: x_new * w });
                        mode = Mode::Reciprocal;
                        x = w;
                        k_next = rhs_mode(r, mode, t_new, x)?;
                        let speed = k_next.abs().max(1e-300);
                        recip_watch = Some((t_new, hs.abs().max(x.abs() / speed)));
                    } else {
                        x = x_new;
                    }
                }
                Mode::Reciprocal => {
                    let w_old = x;
                    if !x_new.is_finite() {
                        return Err(OdeError::NonFinite { t: t_new });
                    }
                    let crossed = w_old != 0.0 && (x_new == 0.0 || (w_old < 0.0) != (x_new < 0.0));
                    if crossed {
                        let (te, width) = refine_event(r, t, w_old, k1, hs, tol)?;
                        let (before, after) = if x_new == 0.0 { (w_old, -w_old) } else { (w_old, x_new) };
                        let (left, right) = if dir > 0.0 { (before, after) } else { (after, before) };
                        run.events.push(EscapeEvent {
                            t_escape: te,
                            left_sign: Sign::of(left),
                            right_sign: Sign::of(right),
                            bracket: width,
                        });
                        recip_watch = None;
                    }
                    x = x_new;
                    if x.abs() > 1.0 / cap {
                        let nu = 1.0 / x;
                        run.switches.push(ModeSwitch { t: t_new, to: VariableTag::Direct, handoff_product: nu * x });
                        mode = Mode::Direct;
                        x = nu;
                        k_next = rhs_mode(r, mode, t_new, x)?;
                        recip_watch = None;
                    } else if let Some((entry, budget)) = recip_watch {
                        if (t_new - entry).abs() > 10.0 * budget {
                            return Err(OdeError::PoleWithoutReturn { t: t_new });
                        }
                    }
                }
            }
            t = t_new;
            k1 = k_next;
            let fac = ctl.accept_factor(st.err);
            h = if clipped { h.abs().max(hs.abs() * fac).copysign(dir) } else { hs * fac };
            if record_steps && t != target {
                let (v, tag) = real_value(mode, x);
                run.times.push(t);
                run.values.push(v);
                run.tags.push(tag);
            }
        }
        let (v, tag) = real_value(mode, x);
        run.times.push(t);
        run.values.push(v);
        run.tags.push(tag);
    }
    Ok(run)
}

/// Locates the zero of `w` inside an accepted step by bisection on the step fraction.
fn refine_event(r: &ReducedRCE, t: f64, w: f64, k1: f64, h: f64, tol: Tolerance) -> Result<(f64, f64), OdeError> {
    let target = 1e-9 * (1.0 + t.abs());
    let sys = ReciprocalField(r);
    let mut err = None;
    let theta = bisect(
        |theta| {
            if theta == 0.0 {
                return w;
            }
            match dp_step(&sys, t, &[w], &[k1], theta * h, tol) {
                Ok(s) => s.y[0],
                Err(e) => {
                    err = Some(e);
                    0.0
                }
            }
        },
        0.0,
        1.0,
        target / h.abs(),
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok((t + theta * h, (target).min(h.abs())))
}

fn validate_times(r: &ReducedRCE, grid: &TimeGrid) -> Result<(), OdeError> {
    grid.check_avoids(&r.singular_points())?;
    Ok(())
}

fn finish_real(grid: TimeGrid, run: RealRun, report_cap: f64) -> RceTrajectory {
    let mut events = run.events;
    events.sort_by(|a, b| a.t_escape.total_cmp(&b.t_escape));
    RceTrajectory {
        grid,
        values: run.values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        tags: run.tags,
        escape_events: events,
        switches: run.switches,
        truncated: run.truncated,
        stats: run.stats,
        report_cap,
    }
}

/// Integrates the RCE from `ic` at the first grid sample across the grid (either direction).
/// A nonzero imaginary part selects the complex (polar) integration.
pub fn integrate_rce(r: &ReducedRCE, ic: Complex64, grid: &TimeGrid, opts: &IntegrateOptions) -> Result<RceTrajectory, OdeError> {
    if !ic.is_finite() {
        return Err(OdeError::InvalidInitialCondition);
    }
    validate_times(r, grid)?;
    if ic.im != 0.0 {
        return integrate_polar(r, ic, grid, opts);
    }
    let run = run_real(r, RealStart::Value(ic.re), grid.times(), opts, false)?;
    Ok(finish_real(grid.clone(), run, opts.report_cap))
}

/// Integrates a real solution that starts exactly at a pole (`w = 0`) at the first sample.
pub(crate) fn integrate_rce_from_pole(r: &ReducedRCE, grid: &TimeGrid, opts: &IntegrateOptions) -> Result<RceTrajectory, OdeError> {
    validate_times(r, grid)?;
    let run = run_real(r, RealStart::Reciprocal(0.0), grid.times(), opts, false)?;
    Ok(finish_real(grid.clone(), run, opts.report_cap))
}

/// Real trajectory started from the projective value `v/u`, which may be a pole.
pub(crate) fn integrate_rce_projective(
    r: &ReducedRCE,
    u: f64,
    v: f64,
    grid: &TimeGrid,
    opts: &IntegrateOptions,
) -> Result<RceTrajectory, OdeError> {
    validate_times(r, grid)?;
    let start = if v.abs() > opts.escape_cap * u.abs() { RealStart::Reciprocal(u / v) } else { RealStart::Value(v / u) };
    let run = run_real(r, start, grid.times(), opts, false)?;
    Ok(finish_real(grid.clone(), run, opts.report_cap))
}

/// Integrates from `t0` to `t1` and reports the solution at every accepted step.
pub(crate) fn integrate_rce_recorded(
    r: &ReducedRCE,
    start: RealStart,
    t0: f64,
    t1: f64,
    opts: &IntegrateOptions,
) -> Result<RceTrajectory, OdeError> {
    let probe = TimeGrid::new(vec![t0, t1])?;
    validate_times(r, &probe)?;
    let run = run_real(r, start, &[t0, t1], opts, true)?;
    let grid = TimeGrid::new(run.times.clone())?;
    Ok(finish_real(grid, run, opts.report_cap))
}

/// Resumes a trajectory that stopped at a pole, integrating through it in the reciprocal
/// variable and continuing to the end of the grid.
pub fn continue_through_pole(r: &ReducedRCE, prefix: &RceTrajectory, cap: f64) -> Result<RceTrajectory, OdeError> {
    let trunc = prefix.truncated.ok_or(OdeError::NotTruncated)?;
    let mut times = vec![trunc.t];
    times.extend_from_slice(&prefix.grid.times()[trunc.next_index..]);
    let mut opts = IntegrateOptions { escape_cap: cap, policy: PolePolicy::Continue, ..IntegrateOptions::default() };
    opts.report_cap = prefix.report_cap;
    let run = run_real(r, RealStart::Value(trunc.nu), &times, &opts, false)?;
    let mut out = prefix.clone();
    out.truncated = None;
    out.switches.push(ModeSwitch { t: trunc.t, to: VariableTag::Reciprocal, handoff_product: 1.0 });
    out.switches.extend(run.switches.iter().copied());
    out.values.extend(run.values[1..].iter().map(|v| Complex64::new(*v, 0.0)));
    out.tags.extend_from_slice(&run.tags[1..]);
    out.escape_events.extend(run.events.iter().copied());
    out.escape_events.sort_by(|a, b| a.t_escape.total_cmp(&b.t_escape));
    out.stats.accepted += run.stats.accepted;
    out.stats.rejected += run.stats.rejected;
    Ok(out)
}

/// Escape events of a complete trajectory in increasing time.
pub fn detect_escape_events(traj: &RceTrajectory) -> Vec<EscapeEvent> {
    let mut ev = traj.escape_events.clone();
    ev.sort_by(|a, b| a.t_escape.total_cmp(&b.t_escape));
    ev
}

fn integrate_polar(r: &ReducedRCE, ic: Complex64, grid: &TimeGrid, opts: &IntegrateOptions) -> Result<RceTrajectory, OdeError> {
    let sign = ic.im.signum();
    let y0 = [ic.re, ic.im.abs().ln()];
    let states = integrate_system(&PolarField(r), y0, grid.times(), opts.tol)?;
    let values: Vec<Complex64> = states.iter().map(|s| Complex64::new(s[0], sign * s[1].exp())).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(OdeError::NonFinite { t: grid.times()[i] });
    }
    Ok(RceTrajectory {
        grid: grid.clone(),
        tags: vec![VariableTag::Polar; values.len()],
        values,
        escape_events: Vec::new(),
        switches: Vec::new(),
        truncated: None,
        stats: StepStats::default(),
        report_cap: opts.report_cap,
    })
}

/// Complex solution in polar form: `(Re ν, ln Im ν)` at every sample, for callers that need
/// the logarithm of a tiny imaginary part without cancellation.
pub fn integrate_rce_polar_log(
    r: &ReducedRCE,
    re0: f64,
    log_im0: f64,
    grid: &TimeGrid,
    tol: Tolerance,
) -> Result<Vec<[f64; 2]>, OdeError> {
    validate_times(r, grid)?;
    integrate_system(&PolarField(r), [re0, log_im0], grid.times(), tol)
}

/// Linear lift of the RCE, `u̇ = ω₀₁v`, `v̇ = ω₀₂u`, whose ratio `v/u` solves the RCE.
pub struct LiftField<'a>(pub &'a ReducedRCE);

impl OdeSystem<2> for LiftField<'_> {
    fn rhs(&self, t: f64, y: &[f64; 2]) -> Result<[f64; 2], OdeError> {
        let w1 = self.0.omega01.value(t).map_err(coef(t))?;
        let w2 = self.0.omega02.value(t).map_err(coef(t))?;
        Ok([w1 * y[1], w2 * y[0]])
    }
}

/// Two columns of `Ẋ = A(t)X` stacked as `[x₁₁, x₂₁, x₁₂, x₂₂]`.
pub struct StateField<'a>(pub &'a StateMatrix2x2);

impl OdeSystem<4> for StateField<'_> {
    fn rhs(&self, t: f64, y: &[f64; 4]) -> Result<[f64; 4], OdeError> {
        let a = self.0.eval(t).map_err(coef(t))?;
        Ok([
            a[0][0] * y[0] + a[0][1] * y[1],
            a[1][0] * y[0] + a[1][1] * y[1],
            a[0][0] * y[2] + a[0][1] * y[3],
            a[1][0] * y[2] + a[1][1] * y[3],
        ])
    }
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
    fn tanh_solution() {
        let r = riccati("4", Window::new(0.0, 3.0).unwrap());
        let g = TimeGrid::uniform(0.0, 3.0, 301).unwrap();
        let tr = integrate_rce(&r, Complex64::new(0.0, 0.0), &g, &IntegrateOptions::default()).unwrap();
        for (t, v) in g.times().iter().zip(&tr.values) {
            assert!((v.re - 2.0 * (2.0 * t).tanh()).abs() < 1e-8);
        }
        assert!((tr.values[100].re - 1.928_055_160_151_634_5).abs() < 1e-6);
        assert!(detect_escape_events(&tr).is_empty());
    }

    #[test]
    fn fixed_points_stay_put() {
        let r = riccati("4", Window::new(0.0, 5.0).unwrap());
        let g = TimeGrid::uniform(0.0, 5.0, 51).unwrap();
        for ic in [2.0, -2.0] {
            let tr = integrate_rce(&r, Complex64::new(ic, 0.0), &g, &IntegrateOptions::default()).unwrap();
            assert!(tr.values.iter().all(|v| (v.re - ic).abs() < 1e-12));
            assert!(tr.escape_events.is_empty());
        }
    }

    #[test]
    fn power_law_solution() {
        let r = riccati("2/t^2", Window::new(1.0, 10.0).unwrap());
        let g = TimeGrid::uniform(1.0, 10.0, 91).unwrap();
        let tr = integrate_rce(&r, Complex64::new(2.0, 0.0), &g, &IntegrateOptions::default()).unwrap();
        for (t, v) in g.times().iter().zip(&tr.values) {
            assert!((v.re - 2.0 / t).abs() < 1e-6);
        }
    }

    #[test]
    fn escape_through_pole() {
        let r = riccati("4", Window::new(0.0, 4.0).unwrap());
        let g = TimeGrid::uniform(0.0, 4.0, 401).unwrap();
        let tr = integrate_rce(&r, Complex64::new(-3.0, 0.0), &g, &IntegrateOptions::default()).unwrap();
        assert_eq!(tr.escape_events.len(), 1);
        let ev = tr.escape_events[0];
        assert!((ev.t_escape - 0.25 * 5f64.ln()).abs() < 1e-7, "{}", ev.t_escape);
        assert_eq!((ev.left_sign, ev.right_sign), (Sign::Negative, Sign::Positive));
        let exact = 2.0 / (2.0 * (4.0 - 0.25 * 5f64.ln())).tanh();
        assert!((tr.last().re - exact).abs() < 1e-7);
        for s in &tr.switches {
            assert!((s.handoff_product - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn stop_then_continue_matches_single_pass() {
        let r = riccati("4", Window::new(0.0, 2.0).unwrap());
        let g = TimeGrid::uniform(0.0, 2.0, 201).unwrap();
        let stop = IntegrateOptions { policy: PolePolicy::Stop, ..IntegrateOptions::default() };
        let prefix = integrate_rce(&r, Complex64::new(-3.0, 0.0), &g, &stop).unwrap();
        assert!(prefix.truncated.is_some());
        assert!(prefix.values.len() < g.len());
        let full = continue_through_pole(&r, &prefix, 1e6).unwrap();
        assert_eq!(full.values.len(), g.len());
        assert_eq!(full.escape_events.len(), 1);
        let direct = integrate_rce(&r, Complex64::new(-3.0, 0.0), &g, &IntegrateOptions::default()).unwrap();
        for (a, b) in full.values.iter().zip(&direct.values) {
            assert!(crate::numerics::chordal(*a, *b) < 1e-7);
        }
    }

    #[test]
    fn backward_round_trip() {
        let r = riccati("2/t^2", Window::new(1.0, 5.0).unwrap());
        let g = TimeGrid::uniform(1.0, 5.0, 81).unwrap();
        let fwd = integrate_rce(&r, Complex64::new(0.3, 0.0), &g, &IntegrateOptions::default()).unwrap();
        let back = integrate_rce(&r, fwd.last(), &g.reversed(), &IntegrateOptions::default()).unwrap();
        assert!((back.last().re - 0.3).abs() < 100.0 * 1e-9);
    }

    #[test]
    fn complex_fixed_point() {
        let r = riccati("-4", Window::new(0.0, 10.0).unwrap());
        let g = TimeGrid::uniform(10.0, 0.0, 101).unwrap();
        let tr = integrate_rce(&r, Complex64::new(0.0, 2.0), &g, &IntegrateOptions::default()).unwrap();
        assert!(tr.values.iter().all(|v| v.re.abs() < 1e-12 && (v.im - 2.0).abs() < 1e-12));
    }

    #[test]
    fn general_system_harmonic_oscillator() {
        struct Osc;
        impl OdeSystem<2> for Osc {
            fn rhs(&self, _t: f64, y: &[f64; 2]) -> Result<[f64; 2], OdeError> {
                Ok([y[1], -y[0]])
            }
        }
        let times: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let out = integrate_system(&Osc, [1.0, 0.0], &times, Tolerance::new(1e-12, 1e-14)).unwrap();
        for (t, y) in times.iter().zip(&out) {
            assert!((y[0] - t.cos()).abs() < 1e-9);
        }
    }
}
