//! Parameter sweeps over Mathieu `(a₀, q)` grids.
//!
//! Each grid point runs the periodic pipeline: periodic primitive pair from the lift
//! monodromy, Floquet exponents, and forward probes that confirm whether an attractor exists.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cases::CaseSpec;
use crate::floquet::floquet_exponents;
use crate::grid::{TimeGrid, Window};
use crate::odeengine::{integrate_rce, IntegrateOptions, PolePolicy, Tolerance};
use crate::phaseportrait::{sign_predisposition, Predisposition};
use crate::primitive::{default_probes, detect_attractor, find_primitive_periodic, IntrinsicKind, PrimitiveError};
use crate::{Complex64, Error};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("axis {axis} needs at least one point")]
    EmptyAxis { axis: &'static str },
    #[error("window must span at least two periods, got {periods}")]
    TooFewPeriods { periods: u32 },
    #[error("could not build a worker pool: {0}")]
    Pool(String),
}

/// `count` evenly spaced values from `start` to `end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl Axis {
    pub fn single(v: f64) -> Self {
        Axis { start: v, end: v, count: 1 }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n).map(|k| self.start + (self.end - self.start) * k as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub a0: Axis,
    pub q: Axis,
    /// Window length in periods of `2π`.
    pub periods: u32,
    /// Samples per period.
    pub samples_per_period: usize,
    pub rtol: f64,
    pub atol: f64,
    pub escape_cap: f64,
    pub threads: usize,
    /// When set, transitions between neighbouring `a₀` rows are bisected to this width.
    pub refine_resolution: Option<f64>,
}

impl SweepSpec {
    pub fn new(a0: Axis, q: Axis) -> Self {
        SweepSpec {
            a0,
            q,
            periods: 6,
            samples_per_period: 500,
            rtol: 1e-9,
            atol: 1e-12,
            escape_cap: 1e6,
            threads: 4,
            refine_resolution: None,
        }
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.a0.count == 0 {
            return Err(SweepError::EmptyAxis { axis: "a0" });
        }
        if self.q.count == 0 {
            return Err(SweepError::EmptyAxis { axis: "q" });
        }
        if self.periods < 2 {
            return Err(SweepError::TooFewPeriods { periods: self.periods });
        }
        Ok(())
    }

    fn options(&self) -> IntegrateOptions {
        IntegrateOptions {
            tol: Tolerance::new(self.rtol, self.atol),
            escape_cap: self.escape_cap,
            policy: PolePolicy::Continue,
            ..IntegrateOptions::default()
        }
    }

    /// Grid points in row order: `a₀` varies fastest.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let a0s = self.a0.values();
        self.q.values().into_iter().flat_map(|q| a0s.iter().map(move |a| (*a, q))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Inconclusive,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    /// Periodic pole-free attractor; unbounded time-domain growth.
    Attractor,
    /// Periodic attractor with escape events every period.
    AttractorPeriodicEscape,
    /// No attractor, bounded solutions, coefficients of mixed sign.
    NoAttractorBounded,
    /// No attractor and `ω₀₁ω₀₂ < 0` throughout: every solution escapes repeatedly.
    RepetitiveEscape,
}

impl RegimeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Attractor => "attractor",
            RegimeLabel::AttractorPeriodicEscape => "attractor_periodic_escape",
            RegimeLabel::NoAttractorBounded => "no_attractor_bounded",
            RegimeLabel::RepetitiveEscape => "repetitive_escape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub a0: f64,
    pub q: f64,
    pub status: RowStatus,
    pub label: Option<RegimeLabel>,
    pub pair_kind: Option<IntrinsicKind>,
    pub predisposition: Option<Predisposition>,
    pub r1: Option<Complex64>,
    pub r2: Option<Complex64>,
    pub multiplier_moduli: Option<[f64; 2]>,
    pub growth_rate: Option<f64>,
    /// DC average of `ν_R` (pole-free pairs only).
    pub dc_nu_r: Option<f64>,
    /// `(r₁ − r₂)/2` for real pairs, `Im r₁` for imaginary pairs.
    pub dc_intrinsic: Option<f64>,
    /// Mean time between escape events of the attractor, or of a probe when there is none.
    pub escape_cadence: Option<f64>,
    pub rce_periodic: Option<bool>,
    pub q_periodic: Option<bool>,
    pub bounded: Option<bool>,
    pub pi_flag: Option<bool>,
    /// Whether the forward probes agreed with the monodromy; `None` when the multiplier
    /// ratio is too close to one for the probes to settle inside the window.
    pub probe_confirmed: Option<bool>,
    pub message: Option<String>,
}

impl SweepRow {
    fn empty(index: usize, a0: f64, q: f64) -> Self {
        SweepRow {
            index,
            a0,
            q,
            status: RowStatus::Error,
            label: None,
            pair_kind: None,
            predisposition: None,
            r1: None,
            r2: None,
            multiplier_moduli: None,
            growth_rate: None,
            dc_nu_r: None,
            dc_intrinsic: None,
            escape_cadence: None,
            rce_periodic: None,
            q_periodic: None,
            bounded: None,
            pi_flag: None,
            probe_confirmed: None,
            message: None,
        }
    }
}

/// A measured transition between two labels along `a₀` at fixed `q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundary {
    pub q: f64,
    pub a0_low: f64,
    pub a0_high: f64,
    pub label_low: RegimeLabel,
    pub label_high: RegimeLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub boundaries: Vec<Boundary>,
}

fn mean_spacing(events: &[f64]) -> Option<f64> {
    (events.len() >= 2).then(|| (events[events.len() - 1] - events[0]) / (events.len() - 1) as f64)
}

/// Runs the full pipeline at one grid point. Errors are recorded in the row.
pub fn run_point(spec: &SweepSpec, index: usize, a0: f64, q: f64) -> SweepRow {
    let mut row = SweepRow::empty(index, a0, q);
    if let Err(e) = fill_row(spec, &mut row) {
        row.status = match e {
            Error::Primitive(PrimitiveError::DegenerateMonodromy) => RowStatus::Inconclusive,
            _ => RowStatus::Error,
        };
        row.message = Some(e.to_string());
    }
    row
}

fn fill_row(spec: &SweepSpec, row: &mut SweepRow) -> Result<(), Error> {
    let period = 2.0 * PI;
    let t1 = period * f64::from(spec.periods);
    let window = Window::new(0.0, t1)?;
    let case = CaseSpec::mathieu(row.a0, row.q);
    let r = case.reduce(&window)?;
    let grid = TimeGrid::uniform(0.0, t1, spec.samples_per_period * spec.periods as usize + 1)?;
    let opts = spec.options();
    let predisposition = sign_predisposition(&r, &window)?;
    row.predisposition = Some(predisposition);

    let pair = find_primitive_periodic(&r, period, &grid, &opts)?;
    row.pair_kind = Some(pair.kind);
    let fl = floquet_exponents(&r, &pair, period)?;
    row.r1 = Some(fl.r1);
    row.r2 = Some(fl.r2);
    row.multiplier_moduli = Some([fl.multipliers[0].norm(), fl.multipliers[1].norm()]);
    row.growth_rate = Some(fl.growth_rate());
    row.dc_nu_r = fl.nu_r_dc.is_finite().then_some(fl.nu_r_dc);
    row.dc_intrinsic = Some(match pair.kind {
        IntrinsicKind::Real => 0.5 * (fl.r1.re - fl.r2.re),
        IntrinsicKind::Imaginary => fl.r1.im.abs(),
    });
    row.rce_periodic = fl.rce_periodic.as_ref().map(|v| v.periodic);
    row.q_periodic = fl.q_periodic.as_ref().map(|v| v.periodic);
    row.bounded = Some(fl.bounded());
    row.pi_flag = Some(fl.pi_flag);

    let (runs, hit) = detect_attractor(&r, &default_probes(&r, 0.0)?, &grid, &opts)?;
    let has_attractor = pair.kind == IntrinsicKind::Real;
    let moduli = row.multiplier_moduli.unwrap_or([1.0, 1.0]);
    let ratio = moduli[0].min(moduli[1]) / moduli[0].max(moduli[1]);
    let resolvable = !has_attractor || ratio.powf(0.8 * f64::from(spec.periods)) < 1e-8;
    row.probe_confirmed = resolvable.then_some(hit.is_some() == has_attractor);

    row.escape_cadence = if has_attractor {
        let own: Vec<f64> = pair
            .poles
            .iter()
            .copied()
            .filter(|t| {
                let i = grid.nearest_index(*t);
                pair.plus(i).norm() > pair.minus(i).norm()
            })
            .collect();
        mean_spacing(&own)
    } else {
        let probe = runs
            .iter()
            .find_map(|(_, tr)| tr.as_ref().ok())
            .map(|tr| tr.escape_events.iter().map(|e| e.t_escape).collect::<Vec<_>>());
        match probe {
            Some(ev) => mean_spacing(&ev),
            None => {
                let tr = integrate_rce(&r, Complex64::new(0.0, 0.0), &grid, &opts)?;
                mean_spacing(&tr.escape_events.iter().map(|e| e.t_escape).collect::<Vec<_>>())
            }
        }
    };

    row.label = Some(match (has_attractor, pair.poles.is_empty(), predisposition) {
        (true, true, _) => RegimeLabel::Attractor,
        (true, false, _) => RegimeLabel::AttractorPeriodicEscape,
        (false, _, Predisposition::EscapePredisposed) => RegimeLabel::RepetitiveEscape,
        (false, _, _) => RegimeLabel::NoAttractorBounded,
    });
    row.status = if row.probe_confirmed == Some(false) { RowStatus::Inconclusive } else { RowStatus::Ok };
    if row.status == RowStatus::Inconclusive {
        row.message = Some("forward probes disagree with the monodromy".to_string());
    }
    Ok(())
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, SweepError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| SweepError::Pool(e.to_string()))
}

/// One row per grid point, in grid order regardless of completion order.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable, SweepError> {
    spec.validate()?;
    let points = spec.points();
    let pool = pool(spec.threads)?;
    let rows: Vec<SweepRow> = pool.install(|| points.par_iter().enumerate().map(|(i, (a0, q))| run_point(spec, i, *a0, *q)).collect());
    let boundaries = match spec.refine_resolution {
        Some(res) => pool.install(|| refine_boundaries(spec, &rows, res)),
        None => Vec::new(),
    };
    Ok(SweepTable { rows, boundaries })
}

/// Bisects every change of label between neighbouring `a₀` rows down to `resolution`.
pub fn refine_boundaries(spec: &SweepSpec, rows: &[SweepRow], resolution: f64) -> Vec<Boundary> {
    let n_a = spec.a0.count;
    let mut jobs = Vec::new();
    for chunk in rows.chunks(n_a) {
        for w in chunk.windows(2) {
            let (lo, hi) = (&w[0], &w[1]);
            if let (RowStatus::Ok, RowStatus::Ok, Some(a), Some(b)) = (lo.status, hi.status, lo.label, hi.label) {
                if a != b {
                    jobs.push((lo.q, lo.a0, hi.a0, a, b));
                }
            }
        }
    }
    jobs.par_iter()
        .map(|&(q, mut a_lo, mut a_hi, label_lo, label_hi)| {
            let mut guard = 0;
            while (a_hi - a_lo).abs() > resolution && guard < 60 {
                let mid = 0.5 * (a_lo + a_hi);
                match run_point(spec, 0, mid, q).label {
                    Some(l) if l == label_lo => a_lo = mid,
                    Some(l) if l == label_hi => a_hi = mid,
                    _ => break,
                }
                guard += 1;
            }
            Boundary { q, a0_low: a_lo, a0_high: a_hi, label_low: label_lo, label_high: label_hi }
        })
        .collect()
}
