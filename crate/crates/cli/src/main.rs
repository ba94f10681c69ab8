mod commands;
mod exit;
mod output;
mod problem;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{parse_tol, parse_window, Context};
use crate::exit::{Code, Failure};
use crate::output::{Format, Sink};
use crate::problem::Overrides;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  usage error
  2  problem file rejected (schema, unknown key, bad expression)
  3  reduction precondition failed (vanishing s2 or a12, omega01 <= 0, singular window)
  4  numerical failure (integration, primitive pair, fit)
  5  I/O error
  6  inconclusive classification";

/// Analysis of second-order linear time-varying systems through their reduced Riccati equation.
#[derive(Debug, Parser)]
#[command(name = "rce", version, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON problem file.
    #[arg(long, global = true, value_name = "FILE")]
    problem: Option<PathBuf>,
    /// Output path, `-` for stdout.
    #[arg(long, global = true, default_value = "-", value_name = "PATH")]
    out: String,
    /// Table format; reports (floquet, portrait, reduce) are always JSON.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Integration tolerance as `rtol` or `rtol:atol`.
    #[arg(long, global = true, value_parser = parse_tol, value_name = "RTOL[:ATOL]")]
    tol: Option<rce_core::Tolerance>,
    /// |nu| above which the reciprocal variable takes over.
    #[arg(long, global = true, value_name = "CAP")]
    escape_cap: Option<f64>,
    /// Analysis window, overriding the problem file.
    #[arg(long, global = true, value_parser = parse_window, value_name = "T0:T1")]
    window: Option<rce_core::Window>,
    /// Coefficient period for Floquet analysis and periodic pairs.
    #[arg(long, global = true, value_name = "T")]
    period: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Sidecar JSON path (default `<out>.json` for file outputs).
    #[arg(long, global = true, value_name = "PATH")]
    meta: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reduce to the canonical RCE and print omega01, omega02, eta, alpha, sigma0.
    ///
    /// JSON report with the expressions and sampled values; with `--format csv`, columns
    /// t, omega01, omega02, eta, alpha, sigma0 and the expressions in the sidecar.
    Reduce,
    /// Integrate the RCE from `ic` through any escape events.
    ///
    /// Columns: t, nu_re, nu_im, variable_tag (direct | reciprocal | polar). Sidecar: fitted
    /// branch and K, escape events, step counts and a primitive pair summary.
    Solve,
    /// Sample the primitive pair and one member of the solution continuum.
    ///
    /// Columns: t, nu_r, nu_i, phi, nu, nu_complement. The member is `member` from the
    /// problem file, else the one through `ic`, else tanh/cot with K = 0.
    Family,
    /// Rebuild time-domain solutions from a member and its complement.
    ///
    /// Columns: t, y1, x2_1, y2, x2_2, lambda1, lambda2, phi, residual1, residual2 (normalized
    /// source-equation residual per sample).
    Timedomain {
        /// Seed from a `solve` CSV instead of searching for the pair.
        #[arg(long, value_name = "CSV")]
        seed: Option<PathBuf>,
    },
    /// Floquet exponents, multipliers and periodicity verdicts as JSON.
    Floquet,
    /// Phase portrait classification as JSON; exit 6 when inconclusive.
    Portrait,
    /// Mathieu stability sweep over the `sweep` block of the problem file.
    ///
    /// Columns: index, a0, q, status, label, pair_kind, predisposition, r1_re, r1_im, r2_re,
    /// r2_im, multiplier1_modulus, multiplier2_modulus, growth_rate, dc_nu_r, dc_intrinsic,
    /// escape_cadence, rce_periodic, q_periodic, bounded, pi_flag, probe_confirmed, message.
    /// Measured boundaries go to the sidecar.
    Sweep,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = cli.common;
    let problem = c.problem.ok_or_else(|| Failure::usage("--problem <FILE> is required"))?;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::new(Code::Usage, e))?;
    }
    if let Some(cap) = c.escape_cap {
        if !(cap > 1.0 && cap.is_finite()) {
            return Err(Failure::usage(format!("--escape-cap {cap} must be finite and above 1")));
        }
    }
    if let Some(p) = c.period {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Failure::usage(format!("--period {p} must be positive")));
        }
    }
    let ctx = Context {
        problem,
        sink: Sink::new(&c.out),
        format: c.format,
        meta: c.meta,
        overrides: Overrides { tol: c.tol, escape_cap: c.escape_cap, window: c.window, period: c.period },
        threads: c.threads,
    };
    match cli.command {
        Command::Reduce => commands::reduce(&ctx),
        Command::Solve => commands::solve(&ctx),
        Command::Family => commands::family(&ctx),
        Command::Timedomain { seed } => commands::timedomain(&ctx, seed.as_deref()),
        Command::Floquet => commands::floquet(&ctx),
        Command::Portrait => commands::portrait(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Code::Usage as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if f.is_broken_pipe() => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rce: {f}");
            f.exit_code()
        }
    }
}
