//! Problem files: one JSON object describing the system, the window and run options.

use std::path::Path;

use rce_core::cases::{CaseName, CaseSpec};
use rce_core::reduction::reduce;
use rce_core::{
    CoefficientFn, Complex64, GeneralRiccati, IntegrateOptions, ReducedRCE, ScalarSystem, SourceSystem, StateMatrix2x2,
    TimeGrid, Tolerance, Window,
};
use serde::Deserialize;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read problem file {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid problem file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("form {form:?} requires key {key:?}")]
    Missing { form: &'static str, key: &'static str },
    #[error("{command} needs {key:?} in the problem file")]
    Needs { command: &'static str, key: &'static str },
    #[error("key {key:?} is not valid for form {form:?}")]
    Foreign { form: &'static str, key: &'static str },
    #[error("coefficient {key:?}: {source}")]
    Expression { key: &'static str, source: rce_core::ParseError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Case(#[from] rce_core::cases::CaseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Riccati,
    SecondOrder,
    StateMatrix,
    Case,
}

impl Form {
    fn as_str(self) -> &'static str {
        match self {
            Form::Riccati => "riccati",
            Form::SecondOrder => "second_order",
            Form::StateMatrix => "state_matrix",
            Form::Case => "case",
        }
    }
}

/// A real number or a complex one written as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Real(f64),
    Complex([f64; 2]),
}

impl Scalar {
    pub fn to_complex(self) -> Complex64 {
        match self {
            Scalar::Real(x) => Complex64::new(x, 0.0),
            Scalar::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolSpec {
    pub rtol: f64,
    pub atol: f64,
}

/// Uniform samples below `t_switch` are replaced by a geometric ramp starting at step `h`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradedSpec {
    pub t_switch: f64,
    pub ratio: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMethod {
    /// Forward probes, then back-propagation from the window end.
    Auto,
    /// Back-propagation of a complex guess from `t_far`.
    Backward,
    /// Complex guess at an interior anchor, propagated both ways.
    Anchor,
    /// Monodromy eigenvectors over `period`.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub method: Option<PairMethod>,
    pub t_far: Option<f64>,
    pub anchor: Option<f64>,
    pub guess: Option<Scalar>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub branch: String,
    #[serde(rename = "K")]
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub a0: AxisSpec,
    pub q: AxisSpec,
    pub periods: Option<u32>,
    pub samples_per_period: Option<usize>,
    pub refine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    pub tol: Option<TolSpec>,
    pub escape_cap: Option<f64>,
    pub report_cap: Option<f64>,
    pub probes: Option<Vec<f64>>,
    pub period: Option<f64>,
    pub base_time: Option<f64>,
    pub samples: Option<usize>,
    pub graded: Option<GradedSpec>,
    pub eps: Option<f64>,
    #[serde(default)]
    pub pair: PairSpec,
}

/// The problem object exactly as written. Keys belonging to another form are rejected by
/// [`ProblemFile::validate`]; keys unknown to every form are rejected while parsing.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema: Option<u32>,
    pub form: Form,
    pub s2: Option<String>,
    pub s1: Option<String>,
    pub s0: Option<String>,
    pub r1: Option<String>,
    pub r0: Option<String>,
    pub a11: Option<String>,
    pub a12: Option<String>,
    pub a21: Option<String>,
    pub a22: Option<String>,
    pub case: Option<CaseName>,
    #[serde(rename = "N")]
    pub n: Option<u32>,
    pub a0: Option<f64>,
    pub q: Option<f64>,
    pub window: Option<WindowSpec>,
    pub ic: Option<Scalar>,
    pub member: Option<MemberSpec>,
    #[serde(default)]
    pub options: Options,
    pub sweep: Option<SweepBlock>,
}

const RICCATI_KEYS: [&str; 3] = ["s2", "s1", "s0"];
const SECOND_ORDER_KEYS: [&str; 2] = ["r1", "r0"];
const STATE_KEYS: [&str; 4] = ["a11", "a12", "a21", "a22"];
const CASE_KEYS: [&str; 4] = ["case", "N", "a0", "q"];

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Read { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let p: ProblemFile = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    fn present(&self, key: &str) -> bool {
        match key {
            "s2" => self.s2.is_some(),
            "s1" => self.s1.is_some(),
            "s0" => self.s0.is_some(),
            "r1" => self.r1.is_some(),
            "r0" => self.r0.is_some(),
            "a11" => self.a11.is_some(),
            "a12" => self.a12.is_some(),
            "a21" => self.a21.is_some(),
            "a22" => self.a22.is_some(),
            "case" => self.case.is_some(),
            "N" => self.n.is_some(),
            "a0" => self.a0.is_some(),
            "q" => self.q.is_some(),
            _ => false,
        }
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if let Some(v) = self.schema {
            if v != SCHEMA_VERSION {
                return Err(SchemaError::Version(v));
            }
        }
        let form = self.form.as_str();
        let own: &[&'static str] = match self.form {
            Form::Riccati => &RICCATI_KEYS,
            Form::SecondOrder => &SECOND_ORDER_KEYS,
            Form::StateMatrix => &STATE_KEYS,
            Form::Case => &CASE_KEYS,
        };
        for key in RICCATI_KEYS.iter().chain(&SECOND_ORDER_KEYS).chain(&STATE_KEYS).chain(&CASE_KEYS) {
            if !own.contains(key) && self.present(key) {
                return Err(SchemaError::Foreign { form, key });
            }
        }
        match self.form {
            Form::Case => {
                self.case_spec()?.validate()?;
            }
            _ => {
                for key in own {
                    if !self.present(key) {
                        return Err(SchemaError::Missing { form, key });
                    }
                }
                if self.window.is_none() {
                    return Err(SchemaError::Missing { form, key: "window" });
                }
            }
        }
        if let Some(w) = self.window {
            Window::new(w.t0, w.t1).map_err(|e| SchemaError::Invalid(e.to_string()))?;
        }
        if let Some(m) = &self.member {
            if rce_core::Branch::parse(&m.branch).is_none() {
                return Err(SchemaError::Invalid(format!("unknown branch {:?}", m.branch)));
            }
        }
        if let Some(tol) = self.options.tol {
            check_tolerance(tol.rtol, tol.atol)?;
        }
        if let Some(n) = self.options.samples {
            if n < 8 {
                return Err(SchemaError::Invalid(format!("samples = {n}; at least 8 are needed")));
            }
        }
        Ok(())
    }

    pub fn case_spec(&self) -> Result<CaseSpec, SchemaError> {
        let name = self.case.ok_or(SchemaError::Missing { form: "case", key: "case" })?;
        Ok(CaseSpec { name, n: self.n, a0: self.a0, q: self.q })
    }

    fn coefficient(&self, key: &'static str, src: &Option<String>) -> Result<CoefficientFn, SchemaError> {
        let src = src.as_deref().ok_or(SchemaError::Missing { form: self.form.as_str(), key })?;
        CoefficientFn::parse(src).map_err(|source| SchemaError::Expression { key, source })
    }

    /// Parses every coefficient expression without touching the window.
    pub fn source(&self) -> Result<SourceSystem, SchemaError> {
        Ok(match self.form {
            Form::Riccati => SourceSystem::Riccati(GeneralRiccati {
                s2: self.coefficient("s2", &self.s2)?,
                s1: self.coefficient("s1", &self.s1)?,
                s0: self.coefficient("s0", &self.s0)?,
            }),
            Form::SecondOrder => SourceSystem::Scalar(ScalarSystem {
                r1: self.coefficient("r1", &self.r1)?,
                r0: self.coefficient("r0", &self.r0)?,
            }),
            Form::StateMatrix => SourceSystem::StateMatrix(StateMatrix2x2 {
                a11: self.coefficient("a11", &self.a11)?,
                a12: self.coefficient("a12", &self.a12)?,
                a21: self.coefficient("a21", &self.a21)?,
                a22: self.coefficient("a22", &self.a22)?,
            }),
            Form::Case => self.case_spec()?.source()?,
        })
    }
}

pub fn check_tolerance(rtol: f64, atol: f64) -> Result<(), SchemaError> {
    if rtol > 0.0 && rtol < 1.0 && atol >= 0.0 && atol.is_finite() {
        Ok(())
    } else {
        Err(SchemaError::Invalid(format!("tolerances rtol = {rtol}, atol = {atol} are out of range")))
    }
}

/// Command-line overrides applied on top of the problem file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub tol: Option<Tolerance>,
    pub escape_cap: Option<f64>,
    pub window: Option<Window>,
    pub period: Option<f64>,
}

/// Everything a command needs, resolved from the file, the overrides and case defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: ProblemFile,
    pub window: Window,
    pub tol: Tolerance,
    pub opts: IntegrateOptions,
    pub period: Option<f64>,
    pub pair: PairPlan,
    pub base_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairPlan {
    Auto,
    Backward { t_far: f64, guess: Option<Complex64> },
    Anchor { t: f64, guess: Complex64 },
    Periodic { period: f64 },
}

impl Resolved {
    pub fn new(problem: ProblemFile, ov: &Overrides) -> Result<Self, SchemaError> {
        let case = match problem.form {
            Form::Case => Some(problem.case_spec()?),
            _ => None,
        };
        let window = match (ov.window, problem.window, case) {
            (Some(w), _, _) => w,
            (None, Some(w), _) => Window::new(w.t0, w.t1).map_err(|e| SchemaError::Invalid(e.to_string()))?,
            (None, None, Some(c)) => c.default_window(),
            (None, None, None) => return Err(SchemaError::Missing { form: problem.form.as_str(), key: "window" }),
        };
        let o = &problem.options;
        let tol = ov.tol.or(o.tol.map(|t| Tolerance::new(t.rtol, t.atol))).unwrap_or_default();
        let mut opts = IntegrateOptions::default().with_tol(tol);
        if let Some(c) = ov.escape_cap.or(o.escape_cap) {
            if !(c > 1.0 && c.is_finite()) {
                return Err(SchemaError::Invalid(format!("escape cap {c} must be finite and above 1")));
            }
            opts.escape_cap = c;
        }
        if let Some(c) = o.report_cap {
            opts.report_cap = c;
        }
        let period = ov.period.or(o.period).or_else(|| case.and_then(|c| c.period()));
        if let Some(p) = period {
            if !(p > 0.0 && p.is_finite()) {
                return Err(SchemaError::Invalid(format!("period {p} must be positive")));
            }
        }
        let pair = plan_pair(&o.pair, case, period, &window)?;
        let base_time = o.base_time.unwrap_or(match case.map(|c| c.name) {
            Some(CaseName::Qho) if window.contains(0.0) => 0.0,
            _ => window.t0,
        });
        if !window.contains(base_time) {
            return Err(SchemaError::Invalid(format!("base_time {base_time} lies outside the window")));
        }
        Ok(Resolved { problem, window, tol, opts, period, pair, base_time })
    }

    /// Window the reduction has to cover: the analysis window plus any back-propagation start.
    pub fn reduction_window(&self) -> Window {
        match self.pair {
            PairPlan::Backward { t_far, .. } if t_far > self.window.t1 => Window { t0: self.window.t0, t1: t_far },
            _ => self.window,
        }
    }

    pub fn reduce(&self) -> Result<ReducedRCE, crate::exit::Failure> {
        let w = self.reduction_window();
        match self.problem.form {
            Form::Case => Ok(self.problem.case_spec()?.reduce(&w)?),
            _ => Ok(reduce(&self.problem.source()?, &w)?),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid, SchemaError> {
        let (t0, t1) = (self.window.t0, self.window.t1);
        let o = &self.problem.options;
        let graded = o.graded.or_else(|| match (self.problem.case, o.samples) {
            (Some(CaseName::Bessel), None) => Some(GradedSpec { t_switch: 1.0_f64.min(t1), ratio: 1.002, h: 0.005 }),
            _ => None,
        });
        let g = match graded {
            Some(g) => TimeGrid::graded(t0, g.t_switch, t1, g.ratio, g.h),
            None => TimeGrid::uniform(t0, t1, o.samples.unwrap_or(default_samples(self.problem.case))),
        };
        g.map_err(|e| SchemaError::Invalid(e.to_string()))
    }

    pub fn probes(&self) -> Option<&[f64]> {
        self.problem.options.probes.as_deref()
    }
}

fn default_samples(case: Option<CaseName>) -> usize {
    match case {
        Some(CaseName::Mathieu) => 3001,
        Some(CaseName::Qho) => 2001,
        _ => 1001,
    }
}

fn plan_pair(spec: &PairSpec, case: Option<CaseSpec>, period: Option<f64>, window: &Window) -> Result<PairPlan, SchemaError> {
    let guess = spec.guess.map(Scalar::to_complex);
    let default_method = match (case.map(|c| c.name), period) {
        (Some(CaseName::Bessel), _) => PairMethod::Backward,
        (Some(CaseName::Qho), _) => PairMethod::Anchor,
        (_, Some(_)) => PairMethod::Periodic,
        _ => PairMethod::Auto,
    };
    Ok(match spec.method.unwrap_or(default_method) {
        PairMethod::Auto => PairPlan::Auto,
        PairMethod::Backward => {
            let t_far = spec.t_far.unwrap_or(match case.map(|c| c.name) {
                Some(CaseName::Bessel) => 100.0_f64.max(window.t1),
                _ => window.t1,
            });
            if t_far < window.t1 {
                return Err(SchemaError::Invalid(format!("t_far = {t_far} lies before the window end")));
            }
            PairPlan::Backward { t_far, guess }
        }
        PairMethod::Anchor => {
            let t = spec.anchor.unwrap_or(match case.map(|c| c.name) {
                Some(CaseName::Qho) => 0.0,
                _ => window.t0,
            });
            let guess = match (guess, case) {
                (Some(g), _) => g,
                (None, Some(c)) if c.name == CaseName::Qho => Complex64::new(0.0, f64::from(c.n.unwrap_or(1)).sqrt()),
                _ => return Err(SchemaError::Needs { command: "the anchor pair method", key: "guess" }),
            };
            PairPlan::Anchor { t, guess }
        }
        PairMethod::Periodic => PairPlan::Periodic {
            period: period.ok_or(SchemaError::Needs { command: "the periodic pair method", key: "period" })?,
        },
    })
}
