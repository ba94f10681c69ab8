use std::path::{Path, PathBuf};
use std::process::Command;

use rce_core::cases::{oracle_bessel_first_kind, oracle_hermite_wavefunction};
use serde_json::Value;
use tempfile::TempDir;

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/problems").join(name)
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn rce(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_rce")).args(args).output().expect("binary runs");
    Run {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn rce_ok(args: &[&str]) -> Run {
    let r = rce(args);
    assert_eq!(r.code, 0, "rce {args:?} failed: {}", r.stderr);
    r
}

fn write_problem(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn constant_with_ic(dir: &TempDir, ic: f64) -> PathBuf {
    write_problem(
        dir,
        &format!("constant_{ic}.json"),
        &format!(
            r#"{{"schema":1,"form":"riccati","s2":"-1","s1":"0","s0":"4","window":{{"t0":0,"t1":4}},"ic":{ic},"options":{{"samples":801}}}}"#
        ),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Columns of a CSV file by header name.
fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_path(p).unwrap();
    let headers: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (headers, rows)
}

fn column(p: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = read_csv(p);
    let k = h.iter().position(|x| x == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

fn pole_aware(a: f64, b: f64) -> f64 {
    if a.is_infinite() && b.is_infinite() {
        return 0.0;
    }
    (a - b).abs() / (a * b).abs().max(1.0)
}

/// Least-squares scale of `y` onto `oracle`, and the largest residual relative to `max|oracle|`.
fn scaled_error(y: &[f64], oracle: &[f64]) -> (f64, f64) {
    let a = y.iter().zip(oracle).map(|(u, v)| u * v).sum::<f64>() / oracle.iter().map(|v| v * v).sum::<f64>();
    let peak = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = y.iter().zip(oracle).map(|(u, v)| (u / a - v).abs()).fold(0.0, f64::max) / peak;
    (a, err)
}

#[test]
fn reduce_prints_canonical_coefficients() {
    let r = rce_ok(&["reduce", "--problem", s(&problem("constant.json"))]);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["expressions"]["omega01"], "1");
    assert_eq!(v["expressions"]["omega02"], "4");
    assert!(v["samples"]["omega02"].as_array().unwrap().iter().all(|x| x.as_f64() == Some(4.0)));
}

#[test]
fn reduce_bessel_reports_closed_form() {
    let r = rce_ok(&["reduce", "--problem", s(&problem("bessel5.json"))]);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["omega02_closed_form"], "(4*25-1)/(4*t^2)-1");
    let t: Vec<f64> = v["samples"]["t"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let w: Vec<f64> = v["samples"]["omega02"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (t, w) in t.iter().zip(&w) {
        assert!((w - (99.0 / (4.0 * t * t) - 1.0)).abs() <= 1e-12 * (1.0 + w.abs()));
    }
}

#[test]
fn reduce_csv_writes_expressions_to_sidecar() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.csv");
    rce_ok(&["reduce", "--problem", s(&problem("bessel5.json")), "--format", "csv", "--out", s(&out)]);
    let (h, rows) = read_csv(&out);
    assert_eq!(h, ["t", "omega01", "omega02", "eta", "alpha", "sigma0"]);
    assert_eq!(rows.len(), 101);
    let meta = read_json(&dir.path().join("r.csv.json"));
    assert_eq!(meta["omega02_closed_form"], "(4*25-1)/(4*t^2)-1");
}

#[test]
fn vanishing_a12_is_a_reduction_failure() {
    let r = rce(&["reduce", "--problem", s(&problem("state_zero_a12.json"))]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("a12"));
}

#[test]
fn schema_violations_exit_2() {
    let dir = TempDir::new().unwrap();
    let cases = [
        r#"{"form":"riccati","s2":"-1","s1":"0","s0":"4","window":{"t0":0,"t1":1},"bogus":1}"#,
        r#"{"form":"riccati","s2":"-1","s1":"0","s0":"4+","window":{"t0":0,"t1":1}}"#,
        r#"{"form":"riccati","s2":"-1","s1":"0","r0":"4","window":{"t0":0,"t1":1}}"#,
        r#"{"form":"riccati","s2":"-1","s1":"0","window":{"t0":0,"t1":1}}"#,
        r#"{"form":"case","case":"qho","N":4}"#,
        r#"{"form":"case","case":"bessel"}"#,
        r#"{"schema":2,"form":"case","case":"constant"}"#,
        r#"{"form":"case","case":"constant","options":{"tol":{"rtol":2,"atol":0}}}"#,
        r#"{"form":"riccati","s2":"-1","s1":"0","s0":"4","window":{"t0":1,"t1":0}}"#,
    ];
    for (k, body) in cases.iter().enumerate() {
        let p = write_problem(&dir, &format!("bad{k}.json"), body);
        let r = rce(&["reduce", "--problem", s(&p)]);
        assert_eq!(r.code, 2, "{body}: {}", r.stderr);
    }
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(rce(&["reduce"]).code, 1);
    assert_eq!(rce(&["frobnicate"]).code, 1);
    assert_eq!(rce(&["reduce", "--problem", "/nonexistent/problem.json"]).code, 5);
    assert_eq!(rce(&["floquet", "--problem", s(&problem("mathieu.json")), "--format", "csv"]).code, 1);
    assert_eq!(rce(&["floquet", "--problem", s(&problem("constant.json"))]).code, 1);
    let r = rce(&["solve", "--problem", s(&problem("mathieu.json"))]);
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn solve_from_rest_is_the_tanh_member() {
    let dir = TempDir::new().unwrap();
    let p = constant_with_ic(&dir, 0.0);
    let out = dir.path().join("s.csv");
    rce_ok(&["solve", "--problem", s(&p), "--out", s(&out)]);
    let meta = read_json(&dir.path().join("s.csv.json"));
    assert_eq!(meta["schema"], 1);
    assert_eq!(meta["branch"], "tanh");
    assert!(meta["K"].as_f64().unwrap().abs() <= 1e-12);
    assert!(meta["escape_events"].as_array().unwrap().is_empty());
    let t = column(&out, "t");
    let nu = column(&out, "nu_re");
    for (t, v) in t.iter().zip(&nu) {
        assert!((v - 2.0 * (2.0 * t).tanh()).abs() <= 1e-8);
    }
}

#[test]
fn solve_below_separatrix_escapes_once() {
    let dir = TempDir::new().unwrap();
    let p = constant_with_ic(&dir, -3.0);
    let out = dir.path().join("s.csv");
    rce_ok(&["solve", "--problem", s(&p), "--out", s(&out)]);
    let meta = read_json(&dir.path().join("s.csv.json"));
    assert_eq!(meta["branch"], "coth");
    let half_ln5 = 0.5 * 5f64.ln();
    assert!((meta["K"].as_f64().unwrap() - half_ln5).abs() <= 1e-9);
    let events = meta["escape_events"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert!((events[0]["t_escape"].as_f64().unwrap() - 0.5 * half_ln5).abs() <= 1e-8);
    assert!(meta["switches"].as_u64().unwrap() >= 2);
    let (h, rows) = read_csv(&out);
    assert_eq!(h, ["t", "nu_re", "nu_im", "variable_tag"]);
    assert_eq!(rows.len(), 801);
}

#[test]
fn csv_numbers_carry_seventeen_digits() {
    let dir = TempDir::new().unwrap();
    let p = constant_with_ic(&dir, -3.0);
    let out = dir.path().join("s.csv");
    rce_ok(&["solve", "--problem", s(&p), "--out", s(&out)]);
    let (_, rows) = read_csv(&out);
    for row in &rows {
        for cell in &row[..3] {
            let x: f64 = cell.parse().unwrap();
            if x.is_finite() {
                assert_eq!(format!("{x:.16e}"), *cell);
                let mantissa = cell.split('e').next().unwrap().replace(['-', '.'], "");
                assert_eq!(mantissa.len(), 17, "{cell}");
            }
        }
    }
}

#[test]
fn jsonl_rows_match_csv_rows() {
    let dir = TempDir::new().unwrap();
    let p = constant_with_ic(&dir, 1.0);
    let csv_out = dir.path().join("f.csv");
    rce_ok(&["family", "--problem", s(&p), "--out", s(&csv_out)]);
    let r = rce_ok(&["family", "--problem", s(&p), "--format", "jsonl"]);
    let lines: Vec<Value> = r.stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let nu = column(&csv_out, "nu");
    assert_eq!(lines.len(), nu.len());
    for (l, v) in lines.iter().zip(&nu) {
        assert_eq!(l["nu"].as_f64().unwrap(), *v);
    }
}

#[test]
fn family_member_and_complement_share_k() {
    let dir = TempDir::new().unwrap();
    let p = constant_with_ic(&dir, 1.0);
    let out = dir.path().join("f.csv");
    rce_ok(&["family", "--problem", s(&p), "--out", s(&out)]);
    let meta = read_json(&dir.path().join("f.csv.json"));
    assert_eq!(meta["member"]["branch"], "tanh");
    assert_eq!(meta["complement"]["branch"], "coth");
    assert_eq!(meta["member"]["K"], meta["complement"]["K"]);
    assert!(meta["rce_residual"].as_f64().unwrap() <= 1e-5);
    let nu = column(&out, "nu");
    let nc = column(&out, "nu_complement");
    let nr = column(&out, "nu_r");
    let ni = column(&out, "nu_i");
    assert!((nu[0] - 1.0).abs() <= 1e-12);
    // tanh and coth members are reciprocal about the primitive pair: (ν − ν_R)(ν_c − ν_R) = ν_I².
    for i in 0..nu.len() {
        let lhs = (nu[i] - nr[i]) * (nc[i] - nr[i]);
        assert!((lhs - ni[i] * ni[i]).abs() <= 1e-9 * ni[i] * ni[i]);
    }
}

#[test]
fn timedomain_seeded_from_solve_export() {
    let dir = TempDir::new().unwrap();
    let p = constant_with_ic(&dir, -3.0);
    let traj = dir.path().join("traj.csv");
    rce_ok(&["solve", "--problem", s(&p), "--out", s(&traj)]);
    let seeded = dir.path().join("seeded.csv");
    rce_ok(&["timedomain", "--problem", s(&p), "--seed", s(&traj), "--out", s(&seeded)]);
    let direct = dir.path().join("direct.csv");
    rce_ok(&["timedomain", "--problem", s(&p), "--out", s(&direct)]);

    let solve_meta = read_json(&dir.path().join("traj.csv.json"));
    let seed_meta = read_json(&dir.path().join("seeded.csv.json"));
    assert_eq!(seed_meta["member"]["branch"], solve_meta["branch"]);
    let dk = seed_meta["member"]["K"].as_f64().unwrap() - solve_meta["K"].as_f64().unwrap();
    assert!(dk.abs() <= 1e-8, "K drift {dk}");
    assert_eq!(seed_meta["shape1"], "sinh");

    assert_eq!(column(&seeded, "t"), column(&traj, "t"));
    for name in ["y1", "y2", "lambda1"] {
        let a = column(&seeded, name);
        let b = column(&direct, name);
        let worst = a.iter().zip(&b).map(|(x, y)| pole_aware(*x, *y)).fold(0.0, f64::max);
        assert!(worst <= 1e-7, "{name}: {worst}");
    }
    let res: Vec<f64> = seed_meta["source_residual"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(res.iter().all(|r| *r <= 1e-5), "{res:?}");
}

#[test]
fn bessel_solution_follows_analytic_cot_through_poles() {
    let dir = TempDir::new().unwrap();
    let fam = dir.path().join("fam.csv");
    let bessel = problem("bessel5.json");
    rce_ok(&["family", "--problem", s(&bessel), "--out", s(&fam)]);
    let meta = read_json(&dir.path().join("fam.csv.json"));
    assert_eq!(meta["member"]["branch"], "cot");
    let analytic = column(&fam, "nu");
    let body = std::fs::read_to_string(&bessel).unwrap();
    let mut v: Value = serde_json::from_str(&body).unwrap();
    v["ic"] = analytic[0].into();
    let p = write_problem(&dir, "bessel_ic.json", &v.to_string());
    let out = dir.path().join("solve.csv");
    rce_ok(&["solve", "--problem", s(&p), "--out", s(&out)]);
    let nu = column(&out, "nu_re");
    let worst = nu.iter().zip(&analytic).map(|(a, b)| pole_aware(*a, *b)).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "worst {worst}");
    let events = read_json(&dir.path().join("solve.csv.json"))["escape_events"].as_array().unwrap().len();
    assert!(events >= 3, "{events} events");
}

#[test]
fn bessel_timedomain_columns_follow_first_kind() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("td.csv");
    rce_ok(&["timedomain", "--problem", s(&problem("bessel5.json")), "--out", s(&out)]);
    let t = column(&out, "t");
    let y1 = column(&out, "y1");
    let (ts, ys): (Vec<f64>, Vec<f64>) = t.iter().zip(&y1).filter(|(t, _)| **t >= 0.1).map(|(t, y)| (*t, *y)).unzip();
    let oracle: Vec<f64> = ts.iter().map(|t| oracle_bessel_first_kind(5, *t).unwrap()).collect();
    let (_, err) = scaled_error(&ys, &oracle);
    assert!(err <= 1e-6, "J5 shape error {err}");
    let meta = read_json(&dir.path().join("td.csv.json"));
    assert_eq!(meta["shape1"], "sin");
    assert_eq!(meta["shape2"], "cos");
    let residual2 = column(&out, "residual2");
    assert!(residual2.iter().all(|r| *r <= 1e-5));
}

#[test]
fn qho_timedomain_is_the_bounded_state() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("td.csv");
    rce_ok(&["timedomain", "--problem", s(&problem("qho5.json")), "--out", s(&out)]);
    let t = column(&out, "t");
    let y1 = column(&out, "y1");
    let oracle: Vec<f64> = t.iter().map(|t| oracle_hermite_wavefunction(2, *t)).collect();
    let (_, err) = scaled_error(&y1, &oracle);
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn mathieu_floquet_report() {
    let r = rce_ok(&["floquet", "--problem", s(&problem("mathieu.json"))]);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["schema"], 1);
    let r1 = v["r1"].as_array().unwrap();
    assert!(r1[0].as_f64().unwrap() > 0.0);
    assert!(r1[1].as_f64().unwrap().abs() <= 1e-9);
    assert!((v["multiplier_product"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
    assert_eq!(v["bounded"], false);
}

#[test]
fn portrait_of_the_constant_case() {
    let r = rce_ok(&["portrait", "--problem", s(&problem("constant.json"))]);
    let v: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["kind"], "attractor_separatrix");
    assert_eq!(v["predisposition"], "stable_capable");
}

#[test]
fn sweep_rows_are_complete_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    rce_ok(&["sweep", "--problem", s(&problem("sweep.json")), "--out", s(&a), "--threads", "3"]);
    rce_ok(&["sweep", "--problem", s(&problem("sweep.json")), "--out", s(&b), "--threads", "1"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let (h, rows) = read_csv(&a);
    assert_eq!(rows.len(), 9);
    let status = h.iter().position(|x| x == "status").unwrap();
    let label = h.iter().position(|x| x == "label").unwrap();
    assert!(rows.iter().all(|r| r[status] == "ok" || r[status] == "inconclusive"));
    assert_eq!(rows[0][label], "repetitive_escape");
    assert_eq!(rows[8][label], "attractor");
    let a0: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(a0[0], -3.0);
    assert_eq!(a0[8], 1.0);
    let meta = read_json(&dir.path().join("a.csv.json"));
    assert_eq!(meta["spec"]["a0"]["count"], 9);
}

#[test]
fn window_and_tolerance_overrides() {
    let dir = TempDir::new().unwrap();
    let p = constant_with_ic(&dir, 0.0);
    let out = dir.path().join("s.csv");
    rce_ok(&["solve", "--problem", s(&p), "--window", "0:1", "--tol", "1e-11:1e-13", "--escape-cap", "1e4", "--out", s(&out)]);
    let t = column(&out, "t");
    assert_eq!(t[0], 0.0);
    assert_eq!(*t.last().unwrap(), 1.0);
    assert_eq!(rce(&["solve", "--problem", s(&p), "--window", "1:0"]).code, 1);
    assert_eq!(rce(&["solve", "--problem", s(&p), "--tol", "abc"]).code, 1);
    assert_eq!(rce(&["solve", "--problem", s(&p), "--escape-cap", "0.5"]).code, 1);
}
