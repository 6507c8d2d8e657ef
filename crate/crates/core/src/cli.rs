//! Command-line front end. Exit codes: 0 success, 1 configuration error,
//! 2 numeric failure, 3 gate failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::analysis::{self, CheckReport};
use crate::config::RunConfig;
use crate::field::{self, random_smooth, random_smooth_vector, Mollify, MollifierIndex, ScalarField, TorusGrid, VectorField};
use crate::harness::{self, HarnessError, RunStatus, SweepConfig};
use crate::io;
use crate::limit::{run_limit, LimitState};
use crate::scaled::{run_scaled, ScaledState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_GATE: i32 = 3;

/// Environment variable that overrides `--out`.
pub const OUT_ENV: &str = "INERTIA_LAB_OUT";

#[derive(Parser, Debug)]
#[command(name = "inertia-lab", version, about = "Scaled compressible Navier-Stokes runs, limit runs and inertial-limit sweeps on the periodic torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the scaled system for the configured ε.
    RunScaled(RunArgs),
    /// Integrate the overdamped limit system.
    RunLimit(RunArgs),
    /// Run the ε-sweep described by the config's `sweep` section.
    Sweep(SweepArgs),
    /// Check the operator identities on a 2D 64² grid.
    VerifyOperators(VerifyArgs),
    /// Summarize a finished run or sweep directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism, capped at the ε count.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Mollifier indices as `A..B`: every power-of-two multiple of A up to B.
    #[arg(long, value_parser = parse_ladder, default_value = "2..64")]
    pub m_ladder: Ladder,
    #[arg(long)]
    pub json: bool,
    /// Also write `operators.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Mollifier indices for the commutator table.
#[derive(Debug, Clone, PartialEq)]
pub struct Ladder(pub Vec<f64>);

/// `"A..B"` to `[A, 2A, 4A, ...]` up to `B`.
pub fn parse_ladder(s: &str) -> Result<Ladder, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad lower bound: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad upper bound: {e}"))?;
    if !(a > 0.0 && b >= a && b.is_finite()) {
        return Err(format!("need 0 < A <= B, got {a}..{b}"));
    }
    let mut out = vec![a];
    while out.last().unwrap() * 2.0 <= b * (1.0 + 1e-12) {
        out.push(out.last().unwrap() * 2.0);
    }
    Ok(Ladder(out))
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn
    }
    fn log(&self, r: &log::Record) {
        if self.enabled(r.metadata()) {
            eprintln!("{}: {}", r.level().as_str().to_lowercase(), r.args());
        }
    }
    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

/// Parse arguments, dispatch, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(log::LevelFilter::Warn);
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::RunScaled(a) => cmd_run(&a, false),
        Command::RunLimit(a) => cmd_run(&a, true),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::VerifyOperators(a) => cmd_verify_operators(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn out_dir(flag: &Option<PathBuf>, config: Option<&RunConfig>) -> PathBuf {
    if let Some(env) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    flag.clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path) -> Result<RunConfig, i32> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("config error: {e}");
        EXIT_CONFIG
    })
}

fn cmd_run(a: &RunArgs, limit: bool) -> i32 {
    let cfg = match load(&a.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if !limit && cfg.params.epsilon <= 0.0 {
        eprintln!("config error: run-scaled needs epsilon > 0 (hint: use run-limit for the epsilon = 0 system)");
        return EXIT_CONFIG;
    }
    let grid = cfg.build_grid();
    let rho0 = cfg.initial_density.sample(&grid);
    let outcome = if limit {
        run_limit(&LimitState::new(rho0), &cfg.params, &cfg.control)
    } else {
        cfg.initial_velocity
            .sample(&rho0, &cfg.params)
            .and_then(|u0| run_scaled(&ScaledState::from_velocity(rho0, &u0), &cfg.params, &cfg.control))
    };
    let record = match outcome {
        Ok(r) => r,
        Err(e) => {
            eprintln!("numeric failure: {e}");
            return EXIT_NUMERIC;
        }
    };
    let dir = out_dir(&a.out, Some(&cfg));
    let manifest = match io::write_run(&dir, &record, &cfg) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("cannot write outputs: {e}");
            return EXIT_NUMERIC;
        }
    };
    let s = &manifest.summary;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&manifest).expect("manifest serializes"));
    } else {
        let (name, label) = if limit { ("run-limit", "max|q|") } else { ("run-scaled", "max(0,r)") };
        println!(
            "{name}: {} steps, {label} = {:.3e} ({:.3e} of initial energy, tolerance {:.1e}) {}",
            s.steps,
            s.residual,
            s.relative_residual,
            s.tolerance,
            if s.pass { "PASS" } else { "FAIL" }
        );
        println!(
            "  mass drift {:.2e}, min density {:.4}, slaving defect {:.2e}, floor activations {}; outputs in {}",
            s.mass_drift,
            s.min_density,
            s.slaving_defect,
            s.floor_activations,
            dir.display()
        );
    }
    EXIT_OK
}

fn print_gate(gate: &harness::GateReport) {
    for (eps, v) in &gate.values {
        eprintln!("  epsilon {eps:.4e}: eps*int rho0|u0|^2 = {v:.4e}");
    }
}

fn cmd_sweep(a: &SweepArgs) -> i32 {
    let cfg = match load(&a.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let sweep = match SweepConfig::from_run_config(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let default_workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = a.workers.unwrap_or(default_workers).min(sweep.epsilons.len()).max(1);
    let record = match harness::epsilon_sweep(&sweep, workers) {
        Ok(r) => r,
        Err(HarnessError::IllPreparedData { values }) => {
            eprintln!("gate failure: initial data are not well prepared");
            print_gate(&harness::GateReport { values, pass: false });
            return EXIT_GATE;
        }
        Err(e) => {
            eprintln!("numeric failure: {e}");
            return EXIT_NUMERIC;
        }
    };
    let dir = out_dir(&a.out, Some(&cfg));
    if let Err(e) = io::write_sweep(&dir, &record) {
        eprintln!("cannot write outputs: {e}");
        return EXIT_NUMERIC;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    } else {
        print_sweep(&record, &dir);
    }
    if record.entries.iter().any(|e| e.status != RunStatus::Ok) {
        eprintln!("numeric failure: some runs failed; partial results written");
        return EXIT_NUMERIC;
    }
    EXIT_OK
}

fn certificate_time(record: &harness::SweepRecord) -> f64 {
    let times = record.config.base.control.output_times();
    let half = 0.5 * record.config.base.control.t_end;
    times
        .iter()
        .copied()
        .find(|t| (t - half).abs() <= 1e-9 * half)
        .unwrap_or(record.config.base.control.t_end)
}

fn print_sweep(record: &harness::SweepRecord, dir: &Path) {
    println!("sweep: {} epsilons, gate {}", record.entries.len(), if record.gate.pass { "PASS" } else { "FAIL" });
    println!("{:>12} {:>8} {:>10} {:>14} {:>14} {:>12}", "epsilon", "status", "t", "K", "G", "r");
    for e in &record.entries {
        match &e.status {
            RunStatus::Ok => {
                for k in 1..e.times.len() {
                    println!(
                        "{:>12.4e} {:>8} {:>10.4} {:>14.6e} {:>14.6e} {:>12.3e}",
                        e.epsilon, "ok", e.times[k], e.kinetic[k], e.l1_gap[k], e.energy_residual[k]
                    );
                }
            }
            RunStatus::Failed { message } => println!("{:>12.4e} {:>8} {message}", e.epsilon, "failed"),
        }
    }
    for f in &record.fits {
        println!("fit {:<8} t = {:<6} slope {:.4} +- {:.4}", f.quantity, f.t, f.slope, f.stderr);
    }
    let c = harness::kinetic_decay_certificate(record, certificate_time(record));
    println!(
        "certificate at t = {}: K non-increasing in epsilon and K(smallest) <= {:.3e}: {}",
        c.t_star,
        c.threshold,
        if c.pass { "PASS" } else { "FAIL" }
    );
    println!("outputs in {}", dir.display());
}

/// The operator checks, in order.
pub fn operator_reports(ladder: &[f64]) -> Vec<CheckReport> {
    let grid = TorusGrid::new(2, 64).expect("valid grid");
    let f = random_smooth(&grid, 8, 7).map(|v| 1.0 + 0.5 * v);
    let mut out = Vec::new();
    let mut push = |check: &str, hash: String, values: serde_json::Value, value: f64, tolerance: f64| {
        out.push(CheckReport {
            check: check.into(),
            inputs_hash: hash,
            values,
            pass: value <= tolerance,
            tolerance,
        });
    };
    let fhash = analysis::fields_hash(&[&f]);

    let b = analysis::bogovskii(&f);
    let mean = field::mean(&f);
    let div = field::divergence(&b);
    let div_err = div
        .values()
        .iter()
        .zip(f.values())
        .fold(0.0f64, |m, (d, v)| m.max((d + mean - v).abs()));
    push("bogovskii_divergence", fhash.clone(), json!({ "max_abs_error": div_err }), div_err, 1e-12);
    let ratio = field::integrate(&field::grad_tensor(&b).frobenius_squared()).sqrt() / field::lp_norm(&f.centered(), 2.0);
    push(
        "bogovskii_l2_projection",
        fhash.clone(),
        json!({ "grad_norm_over_centered_norm": ratio }),
        (ratio - 1.0).abs(),
        1e-12,
    );

    let (nu, lambda) = (0.1, 0.05);
    let v = random_smooth_vector(&grid, 8, 11);
    let v = VectorField::new(v.components().iter().map(|c| c.centered()).collect()).expect("same grid");
    let back = field::lame_solve(&field::lame_apply(&v, nu, lambda), nu, lambda)
        .expect("mean-free forcing");
    let lame_err = v
        .components()
        .iter()
        .zip(back.components())
        .map(|(a, b)| a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
        .fold(0.0, f64::max)
        / v.sup_norm();
    let vhash = analysis::fields_hash(&v.components().iter().collect::<Vec<_>>());
    push("lame_round_trip", vhash, json!({ "relative_sup_error": lame_err, "nu": nu, "lambda": lambda }), lame_err, 1e-10);

    let norm = field::lp_norm(&f, 2.0);
    let mut worst_mean: f64 = 0.0;
    let mut worst_growth = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    for &m in ladder {
        let s = f.mollify(MollifierIndex::new(m).expect("ladder entries are positive"));
        let dm = (field::mean(&s) - mean).abs();
        let growth = field::lp_norm(&s, 2.0) - norm;
        worst_mean = worst_mean.max(dm);
        worst_growth = worst_growth.max(growth);
        rows.push(json!({ "m": m, "mean_shift": dm, "l2_change": growth }));
    }
    push("mollifier_mean_preservation", fhash.clone(), json!({ "ladder": rows.clone() }), worst_mean, 1e-14);
    push(
        "mollifier_l2_contraction",
        fhash,
        json!({ "ladder": rows }),
        worst_growth.max(0.0) / norm,
        1e-14,
    );

    let cf = grid.sample(|x| x[0].cos());
    let cu = VectorField::new(vec![grid.sample(|x| x[0].sin()), ScalarField::zeros(&grid)]).expect("same grid");
    let ladder_vals = analysis::commutator_ladder(&cf, &cu, ladder).expect("positive ladder");
    let strictly = ladder_vals.windows(2).all(|w| w[1].total < w[0].total);
    let ratio = match (ladder_vals.first(), ladder_vals.last()) {
        (Some(a), Some(b)) if a.total > 0.0 => b.total / a.total,
        _ => f64::INFINITY,
    };
    let ok = strictly && ratio <= 0.05;
    push(
        "friedrichs_commutator_decay",
        analysis::fields_hash(&[&cf, cu.component(0)]),
        json!({ "ladder": ladder_vals, "strictly_decreasing": strictly, "final_over_initial": ratio }),
        if ok { 0.0 } else { 1.0 },
        0.5,
    );
    out
}

fn cmd_verify_operators(a: &VerifyArgs) -> i32 {
    let start = std::time::Instant::now();
    let reports = operator_reports(&a.m_ladder.0);
    let all = reports.iter().all(|r| r.pass);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    } else {
        for r in &reports {
            println!("{:<4} {:<30} {}", if r.pass { "PASS" } else { "FAIL" }, r.check, r.values);
        }
        if let Some(ladder) = reports.iter().find(|r| r.check == "friedrichs_commutator_decay") {
            println!("{:>8} {:>14} {:>14} {:>14}", "m", "A_m", "B_m", "total");
            for row in ladder.values["ladder"].as_array().into_iter().flatten() {
                let get = |k: &str| row[k].as_f64().unwrap_or(f64::NAN);
                println!("{:>8} {:>14.6e} {:>14.6e} {:>14.6e}", get("m"), get("a_part"), get("b_part"), get("total"));
            }
        }
        println!("verify-operators: {} in {:.2?}", if all { "all checks pass" } else { "FAILURES" }, start.elapsed());
    }
    if a.out.is_some() || std::env::var_os(OUT_ENV).is_some() {
        let dir = out_dir(&a.out, None);
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        if let Err(e) = io::atomic_write(&dir.join("operators.json"), text.as_bytes()) {
            eprintln!("cannot write outputs: {e}");
            return EXIT_NUMERIC;
        }
    }
    if all {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    }
}

fn cmd_report(a: &ReportArgs) -> i32 {
    let dir = out_dir(&a.out, None);
    if dir.join("sweep.json").exists() {
        let record = match io::read_sweep(&dir) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("cannot read sweep: {e}");
                return EXIT_CONFIG;
            }
        };
        if let Err(e) = io::write_sweep(&dir, &record) {
            eprintln!("cannot write outputs: {e}");
            return EXIT_NUMERIC;
        }
        if a.json {
            println!("{}", serde_json::to_string_pretty(&record).expect("record serializes"));
        } else {
            print_sweep(&record, &dir);
        }
        return EXIT_OK;
    }
    match io::read_manifest(&dir) {
        Ok(m) => {
            if a.json {
                println!("{}", serde_json::to_string_pretty(&m).expect("manifest serializes"));
            } else {
                let s = &m.summary;
                println!(
                    "{:?} run: {} steps, residual {:.3e} ({:.3e} relative, tolerance {:.1e}) {}",
                    m.kind,
                    s.steps,
                    s.residual,
                    s.relative_residual,
                    s.tolerance,
                    if s.pass { "PASS" } else { "FAIL" }
                );
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("nothing to report in {}: {e}", dir.display());
            EXIT_CONFIG
        }
    }
}
