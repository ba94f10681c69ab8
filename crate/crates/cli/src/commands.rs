use std::path::{Path, PathBuf};

use rce_core::cases::CaseName;
use rce_core::family::{
    family_trajectory, fit_branch_and_k, fit_trajectory, phase_accumulator, rce_residual, PhaseAccumulator,
};
use rce_core::odeengine::integrate_rce;
use rce_core::phaseportrait::{classify_portrait, PortraitOptions};
use rce_core::primitive::{
    decompose_to_primitive, find_primitive, find_primitive_backward, find_primitive_forward, find_primitive_from_anchor,
    find_primitive_periodic, resolve_kind,
};
use rce_core::sweep::{run_sweep, Axis};
use rce_core::timedomain::{dynamic_eigenvalues, reconstruct_member, wronskian};
use rce_core::{
    Branch, CoefficientFn, EscapeEvent, FamilySolution, IntrinsicKind, PortraitKind, PrimitivePair, ReducedRCE, SweepSpec,
    TimeGrid, Window,
};
use serde::Serialize;
use serde_json::json;

use crate::exit::{Code, Failure, WithCode};
use crate::output::{sidecar_path, write_json_file, Cell, Format, Sink, Table};
use crate::problem::{Form, Overrides, PairPlan, ProblemFile, Resolved, SchemaError};

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub problem: PathBuf,
    pub sink: Sink,
    pub format: Option<Format>,
    pub meta: Option<PathBuf>,
    pub overrides: Overrides,
    pub threads: Option<usize>,
}

impl Context {
    fn resolve(&self) -> Result<Resolved, Failure> {
        let p = ProblemFile::load(&self.problem)?;
        Ok(Resolved::new(p, &self.overrides)?)
    }

    fn table_format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    fn report_only(&self, command: &str) -> Result<(), Failure> {
        match self.format {
            Some(Format::Csv) => Err(Failure::usage(format!("{command} writes a JSON report; use --format jsonl"))),
            _ => Ok(()),
        }
    }

    /// Explicit `--meta`, else `<out>.json` beside a file output; nothing for stdout.
    fn meta_path(&self) -> Option<PathBuf> {
        self.meta.clone().or_else(|| self.sink.path().map(sidecar_path))
    }

    fn write_meta<T: Serialize>(&self, meta: &T) -> Result<(), Failure> {
        match self.meta_path() {
            Some(p) => write_json_file(&p, meta),
            None => Ok(()),
        }
    }
}

fn find_pair(res: &Resolved, r: &ReducedRCE, grid: &TimeGrid) -> Result<PrimitivePair, Failure> {
    Ok(match res.pair {
        PairPlan::Auto => match res.probes() {
            Some(probes) => match find_primitive_forward(r, probes, grid, &res.opts)?.pair {
                Some(p) => p,
                None => find_primitive_backward(r, None, grid.t1(), grid, res.tol)?,
            },
            None => find_primitive(r, grid, &res.opts)?,
        },
        PairPlan::Backward { t_far, guess } => find_primitive_backward(r, guess, t_far, grid, res.tol)?,
        PairPlan::Anchor { t, guess } => find_primitive_from_anchor(r, guess, t, grid, res.tol)?,
        PairPlan::Periodic { period } => find_primitive_periodic(r, period, grid, &res.opts)?,
    })
}

/// Phase based at `base_time`. For the Bessel case based at the window start, the small-time
/// tail `∫₀^{t₀}ω₀₁ν_Im ≈ t₀ν_Im(t₀)/(2N)` is added so the phase counts from `t = 0`.
fn phase(res: &Resolved, r: &ReducedRCE, pair: &PrimitivePair) -> Result<PhaseAccumulator, Failure> {
    let phi = phase_accumulator(r, pair, res.base_time)?;
    let p = &res.problem;
    let implicit_base = p.options.base_time.is_none();
    if let (Some(CaseName::Bessel), Some(n), true) = (p.case, p.n, implicit_base) {
        if pair.kind == IntrinsicKind::Imaginary && res.base_time == pair.grid.t0() && res.base_time > 0.0 {
            let tail = res.base_time * pair.nu_i[0] / (2.0 * f64::from(n));
            return Ok(phi.shifted(tail, res.base_time));
        }
    }
    Ok(phi)
}

/// Member named in the problem, else the one through `ic`, else the cosh/sin shaped default.
fn member(res: &Resolved, pair: &PrimitivePair, phi: &PhaseAccumulator) -> Result<FamilySolution, Failure> {
    let p = &res.problem;
    if let Some(m) = &p.member {
        let branch = Branch::parse(&m.branch).ok_or_else(|| Failure::new(Code::Schema, SchemaError::Invalid(m.branch.clone())))?;
        if !branch.fits(pair.kind) {
            return Err(Failure::new(
                Code::Schema,
                SchemaError::Invalid(format!("branch {} does not fit a {} pair", branch.as_str(), pair.kind.as_str())),
            ));
        }
        return Ok(FamilySolution::new(branch, m.k, phi.base_time));
    }
    if let Some(ic) = p.ic {
        let ic = ic.to_complex();
        if ic.im != 0.0 {
            return Err(Failure::usage("a complex initial value does not select a real member; give \"member\" instead"));
        }
        return Ok(fit_branch_and_k(pair, phi, ic.re, pair.grid.t0())?);
    }
    let branch = match pair.kind {
        IntrinsicKind::Real => Branch::Tanh,
        IntrinsicKind::Imaginary => Branch::Cot,
    };
    Ok(FamilySolution::new(branch, 0.0, phi.base_time))
}

#[derive(Serialize)]
struct PairSummary {
    kind: IntrinsicKind,
    samples: usize,
    t0: f64,
    t1: f64,
    nu_r_start: f64,
    nu_i_start: f64,
    nu_r_end: f64,
    nu_i_end: f64,
    min_abs_intrinsic: f64,
    poles: Vec<f64>,
}

impl PairSummary {
    fn of(pair: &PrimitivePair) -> Self {
        let n = pair.len();
        PairSummary {
            kind: pair.kind,
            samples: n,
            t0: pair.grid.t0(),
            t1: pair.grid.t1(),
            nu_r_start: pair.nu_r[0],
            nu_i_start: pair.nu_i[0],
            nu_r_end: pair.nu_r[n - 1],
            nu_i_end: pair.nu_i[n - 1],
            min_abs_intrinsic: pair.min_abs_intrinsic(),
            poles: pair.poles.clone(),
        }
    }
}

fn member_json(f: &FamilySolution) -> serde_json::Value {
    json!({ "branch": f.branch.as_str(), "K": finite_or_null(f.k), "base_time": f.base_time })
}

fn finite_or_null(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn expression(c: &CoefficientFn) -> String {
    c.to_string()
}

pub fn reduce(ctx: &Context) -> Result<(), Failure> {
    let res = ctx.resolve()?;
    let r = res.reduce()?;
    let closed = match res.problem.form {
        Form::Case => Some(res.problem.case_spec()?.omega02_closed_form()?),
        _ => None,
    };
    let n = res.problem.options.samples.unwrap_or(101);
    let times: Vec<f64> = sample_times(&res.window, n, &r.singular_points());
    let coeffs = [("omega01", &r.omega01), ("omega02", &r.omega02), ("eta", &r.eta), ("alpha", &r.alpha), ("sigma0", &r.sigma0)];
    let mut table = Table::new(&["t", "omega01", "omega02", "eta", "alpha", "sigma0"]);
    for t in &times {
        let mut row = vec![Cell::Num(*t)];
        for (_, c) in &coeffs {
            row.push(Cell::Num(c.value(*t)?));
        }
        table.push(row);
    }
    let mut expressions = serde_json::Map::new();
    for (name, c) in &coeffs {
        expressions.insert((*name).into(), expression(c).into());
    }
    let meta = json!({
        "form": form_name(res.problem.form),
        "window": res.window,
        "expressions": expressions,
        "omega02_closed_form": closed,
        "singular_points": r.singular_points(),
    });
    match ctx.format {
        Some(Format::Csv) => {
            ctx.sink.table(&table, Format::Csv)?;
            ctx.write_meta(&meta)
        }
        _ => {
            let mut report = meta;
            let samples: serde_json::Map<String, serde_json::Value> = table
                .headers
                .iter()
                .enumerate()
                .map(|(k, h)| {
                    let col: Vec<serde_json::Value> =
                        table.rows.iter().map(|row| if let Cell::Num(x) = row[k] { finite_or_null(x) } else { serde_json::Value::Null }).collect();
                    (h.clone(), serde_json::Value::Array(col))
                })
                .collect();
            report["samples"] = samples.into();
            ctx.sink.report(&report)
        }
    }
}

fn form_name(f: Form) -> &'static str {
    match f {
        Form::Riccati => "riccati",
        Form::SecondOrder => "second_order",
        Form::StateMatrix => "state_matrix",
        Form::Case => "case",
    }
}

fn sample_times(w: &Window, n: usize, singular: &[f64]) -> Vec<f64> {
    w.linspace(n.max(2)).into_iter().filter(|t| singular.iter().all(|s| (t - s).abs() > 1e-12 * (1.0 + s.abs()))).collect()
}

#[derive(Serialize)]
struct SolveMeta {
    ic: [f64; 2],
    branch: Option<&'static str>,
    #[serde(rename = "K")]
    k: Option<f64>,
    base_time: f64,
    escape_events: Vec<EscapeEvent>,
    switches: usize,
    accepted_steps: usize,
    rejected_steps: usize,
    truncated_at: Option<f64>,
    pair: PairSummary,
}

pub fn solve(ctx: &Context) -> Result<(), Failure> {
    let res = ctx.resolve()?;
    let ic = res.problem.ic.ok_or(SchemaError::Needs { command: "solve", key: "ic" })?.to_complex();
    let r = res.reduce()?;
    let grid = res.grid()?;
    let traj = integrate_rce(&r, ic, &grid, &res.opts)?;
    let pair = find_pair(&res, &r, &grid)?;
    let phi = phase(&res, &r, &pair)?;
    let fitted = if ic.im == 0.0 { Some(fit_branch_and_k(&pair, &phi, ic.re, grid.t0())?) } else { None };

    let mut table = Table::new(&["t", "nu_re", "nu_im", "variable_tag"]);
    for ((t, v), tag) in traj.times().iter().zip(&traj.values).zip(&traj.tags) {
        table.push(vec![Cell::Num(*t), Cell::Num(v.re), Cell::Num(v.im), tag.as_str().into()]);
    }
    ctx.sink.table(&table, ctx.table_format())?;
    ctx.write_meta(&SolveMeta {
        ic: [ic.re, ic.im],
        branch: fitted.map(|f| f.branch.as_str()),
        k: fitted.map(|f| f.k).filter(|k| k.is_finite()),
        base_time: phi.base_time,
        escape_events: traj.escape_events.clone(),
        switches: traj.switches.len(),
        accepted_steps: traj.stats.accepted,
        rejected_steps: traj.stats.rejected,
        truncated_at: traj.truncated.map(|t| t.t),
        pair: PairSummary::of(&pair),
    })
}

pub fn family(ctx: &Context) -> Result<(), Failure> {
    let res = ctx.resolve()?;
    let r = res.reduce()?;
    let grid = res.grid()?;
    let pair = find_pair(&res, &r, &grid)?;
    let phi = phase(&res, &r, &pair)?;
    let f = member(&res, &pair, &phi)?;
    let c = f.complement();
    let nu = family_trajectory(&f, &pair, &phi);
    let nu_c = family_trajectory(&c, &pair, &phi);
    let mut table = Table::new(&["t", "nu_r", "nu_i", "phi", "nu", "nu_complement"]);
    for (i, t) in pair.times().iter().enumerate() {
        table.push(vec![
            Cell::Num(*t),
            Cell::Num(pair.nu_r[i]),
            Cell::Num(pair.nu_i[i]),
            Cell::Num(phi.phi[i]),
            Cell::Num(nu[i]),
            Cell::Num(nu_c[i]),
        ]);
    }
    ctx.sink.table(&table, ctx.table_format())?;
    ctx.write_meta(&json!({
        "member": member_json(&f),
        "complement": member_json(&c),
        "rce_residual": finite_or_null(rce_residual(&r, pair.times(), &nu)?),
        "pair": PairSummary::of(&pair),
    }))
}

/// A `solve` export read back: grid, real trajectory and, when present, the pair kind from
/// its sidecar.
struct Seed {
    grid: TimeGrid,
    nu: Vec<f64>,
    kind: Option<IntrinsicKind>,
}

fn read_seed(path: &Path) -> Result<Seed, Failure> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(it), Some(inu)) = (col("t"), col("nu_re").or_else(|| col("nu"))) else {
        return Err(Failure::new(Code::Schema, SchemaError::Invalid(format!("{} lacks t and nu_re columns", path.display()))));
    };
    let iim = col("nu_im");
    let (mut t, mut nu) = (Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec?;
        let field = |k: usize| -> Result<f64, Failure> {
            rec.get(k)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|e| Failure::new(Code::Schema, SchemaError::Invalid(format!("{}: {e}", path.display()))))
        };
        if let Some(k) = iim {
            if field(k)? != 0.0 {
                return Err(Failure::usage("seed trajectory is complex; only real trajectories select a member"));
            }
        }
        t.push(field(it)?);
        nu.push(field(inu)?);
    }
    let grid = TimeGrid::new(t).code(Code::Schema)?;
    let kind = std::fs::read_to_string(sidecar_path(path))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| serde_json::from_value::<IntrinsicKind>(v["pair"]["kind"].clone()).ok());
    Ok(Seed { grid, nu, kind })
}

pub fn timedomain(ctx: &Context, seed: Option<&Path>) -> Result<(), Failure> {
    let mut res = ctx.resolve()?;
    let (r, pair, phi, f) = match seed {
        Some(path) => {
            let s = read_seed(path)?;
            res.window = s.grid.window();
            if res.problem.options.base_time.is_none() {
                res.base_time = res.window.t0;
            }
            let r = res.reduce()?;
            let kind = match s.kind {
                Some(k) => k,
                None => resolve_kind(&r, &s.grid, &res.opts)?,
            };
            let pair = decompose_to_primitive(&r, &s.grid, &s.nu, kind)?;
            let phi = phase(&res, &r, &pair)?;
            let f = fit_trajectory(&pair, &phi, &s.nu)?;
            (r, pair, phi, f)
        }
        None => {
            let r = res.reduce()?;
            let grid = res.grid()?;
            let pair = find_pair(&res, &r, &grid)?;
            let phi = phase(&res, &r, &pair)?;
            let f = member(&res, &pair, &phi)?;
            (r, pair, phi, f)
        }
    };
    let y1 = reconstruct_member(&r, &pair, &phi, &f, 1.0)?;
    let y2 = reconstruct_member(&r, &pair, &phi, &f.complement(), 1.0)?;
    let (l1, l2) = dynamic_eigenvalues(&r, &pair, &phi, &f)?;
    let res1 = y1.residual_samples(&r)?;
    let res2 = y2.residual_samples(&r)?;
    let mut table =
        Table::new(&["t", "y1", "x2_1", "y2", "x2_2", "lambda1", "lambda2", "phi", "residual1", "residual2"]);
    for (i, t) in pair.times().iter().enumerate() {
        table.push(vec![
            Cell::Num(*t),
            Cell::Num(y1.y[i]),
            Cell::Num(y1.x2[i]),
            Cell::Num(y2.y[i]),
            Cell::Num(y2.x2[i]),
            Cell::Num(l1.lambda[i]),
            Cell::Num(l2.lambda[i]),
            Cell::Num(phi.phi[i]),
            Cell::Num(res1[i]),
            Cell::Num(res2[i]),
        ]);
    }
    ctx.sink.table(&table, ctx.table_format())?;
    let w = wronskian(&y1, &y2);
    let (wmin, wmax) = w.iter().filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    ctx.write_meta(&json!({
        "member": member_json(&f),
        "shape1": y1.shape.as_str(),
        "shape2": y2.shape.as_str(),
        "source_residual": [finite_or_null(y1.residual), finite_or_null(y2.residual)],
        "wronskian_range": [finite_or_null(wmin), finite_or_null(wmax)],
        "pair": PairSummary::of(&pair),
    }))
}

pub fn floquet(ctx: &Context) -> Result<(), Failure> {
    ctx.report_only("floquet")?;
    let res = ctx.resolve()?;
    let period = res.period.ok_or_else(|| Failure::usage("floquet needs a period: --period or options.period"))?;
    let r = res.reduce()?;
    let grid = res.grid()?;
    let pair = find_primitive_periodic(&r, period, &grid, &res.opts)?;
    let fl = rce_core::floquet::floquet_exponents(&r, &pair, period)?;
    let mut report = serde_json::to_value(&fl)?;
    report["growth_rate"] = finite_or_null(fl.growth_rate());
    report["bounded"] = fl.bounded().into();
    report["pair"] = serde_json::to_value(PairSummary::of(&pair))?;
    ctx.sink.report(&report)
}

pub fn portrait(ctx: &Context) -> Result<(), Failure> {
    ctx.report_only("portrait")?;
    let res = ctx.resolve()?;
    let r = res.reduce()?;
    let grid = res.grid()?;
    let pair = find_pair(&res, &r, &grid)?;
    let mut opts = PortraitOptions { integrate: res.opts, ..PortraitOptions::default() };
    if let Some(eps) = res.problem.options.eps {
        opts.eps = eps;
    }
    let report = classify_portrait(&r, &pair, &opts)?;
    ctx.sink.report(&report)?;
    if report.kind == PortraitKind::Inconclusive {
        return Err(Failure::inconclusive("phase portrait classification is inconclusive"));
    }
    Ok(())
}

const SWEEP_COLUMNS: [&str; 23] = [
    "index",
    "a0",
    "q",
    "status",
    "label",
    "pair_kind",
    "predisposition",
    "r1_re",
    "r1_im",
    "r2_re",
    "r2_im",
    "multiplier1_modulus",
    "multiplier2_modulus",
    "growth_rate",
    "dc_nu_r",
    "dc_intrinsic",
    "escape_cadence",
    "rce_periodic",
    "q_periodic",
    "bounded",
    "pi_flag",
    "probe_confirmed",
    "message",
];

pub fn sweep(ctx: &Context) -> Result<(), Failure> {
    let p = ProblemFile::load(&ctx.problem)?;
    if p.form != Form::Case || p.case != Some(CaseName::Mathieu) {
        return Err(Failure::new(Code::Schema, SchemaError::Invalid("sweep needs form \"case\" with case \"mathieu\"".into())));
    }
    let block = p.sweep.ok_or(SchemaError::Needs { command: "sweep", key: "sweep" })?;
    let axis = |a: crate::problem::AxisSpec| Axis { start: a.start, end: a.end, count: a.count };
    let mut spec = SweepSpec::new(axis(block.a0), axis(block.q));
    if let Some(n) = block.periods {
        spec.periods = n;
    }
    if let Some(n) = block.samples_per_period {
        spec.samples_per_period = n;
    }
    let tol = ctx.overrides.tol.or(p.options.tol.map(|t| rce_core::Tolerance::new(t.rtol, t.atol)));
    if let Some(t) = tol {
        spec.rtol = t.rtol;
        spec.atol = t.atol;
    }
    if let Some(c) = ctx.overrides.escape_cap.or(p.options.escape_cap) {
        spec.escape_cap = c;
    }
    spec.threads = ctx.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    spec.refine_resolution = block.refine;
    let table_out = run_sweep(&spec)?;

    let mut table = Table::new(&SWEEP_COLUMNS);
    for row in &table_out.rows {
        let c = |z: Option<rce_core::Complex64>| (Cell::from(z.map(|z| z.re)), Cell::from(z.map(|z| z.im)));
        let (r1re, r1im) = c(row.r1);
        let (r2re, r2im) = c(row.r2);
        table.push(vec![
            Cell::Text(row.index.to_string()),
            Cell::Num(row.a0),
            Cell::Num(row.q),
            Cell::Text(serde_plain(&row.status)),
            row.label.map(|l| l.as_str()).into(),
            row.pair_kind.map(|k| k.as_str()).into(),
            row.predisposition.map(|k| k.as_str()).into(),
            r1re,
            r1im,
            r2re,
            r2im,
            row.multiplier_moduli.map(|m| m[0]).into(),
            row.multiplier_moduli.map(|m| m[1]).into(),
            row.growth_rate.into(),
            row.dc_nu_r.into(),
            row.dc_intrinsic.into(),
            row.escape_cadence.into(),
            row.rce_periodic.into(),
            row.q_periodic.into(),
            row.bounded.into(),
            row.pi_flag.into(),
            row.probe_confirmed.into(),
            row.message.as_deref().into(),
        ]);
    }
    ctx.sink.table(&table, ctx.table_format())?;
    ctx.write_meta(&json!({ "spec": spec, "boundaries": table_out.boundaries }))
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

/// `t0:t1` as given on the command line.
pub fn parse_window(s: &str) -> Result<Window, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected t0:t1, got {s:?}"))?;
    let t0: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let t1: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Window::new(t0, t1).map_err(|e| e.to_string())
}

/// `rtol` or `rtol:atol`; a lone `rtol` keeps the default ratio of a thousand to `atol`.
pub fn parse_tol(s: &str) -> Result<rce_core::Tolerance, String> {
    let (rtol, atol) = match s.split_once(':') {
        Some((a, b)) => (a.trim().parse::<f64>().map_err(|e| e.to_string())?, b.trim().parse::<f64>().map_err(|e| e.to_string())?),
        None => {
            let r = s.trim().parse::<f64>().map_err(|e| e.to_string())?;
            (r, r * 1e-3)
        }
    };
    crate::problem::check_tolerance(rtol, atol).map_err(|e| e.to_string())?;
    Ok(rce_core::Tolerance::new(rtol, atol))
}
