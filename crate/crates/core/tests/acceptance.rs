//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Every line is printed even when
//! an earlier criterion fails. Set `INERTIA_LAB_STRICT=1` to turn any FAIL into
//! a non-zero exit status.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use inertia_lab::analysis::{
    continuity_residual, pressure_identity_check, renormalization_residual, RenormalizerB, TestBank,
};
use inertia_lab::config::RunConfig;
use inertia_lab::field::{MollifierIndex, ScalarField, TorusGrid};
use inertia_lab::harness::{epsilon_sweep, SweepConfig, SweepRecord};
use inertia_lab::limit::{run_limit, slaving_defect, LimitState};
use inertia_lab::model::FluidParams;
use inertia_lab::record::RunRecord;
use inertia_lab::scaled::{run_scaled, ScaledState};
use inertia_lab::time::StepControl;

// Pinned thresholds.
const BOGOVSKII_TOL: f64 = 1e-12;
const LAME_TOL: f64 = 1e-10;
const MOLLIFIER_TOL: f64 = 1e-14;
const COMMUTATOR_FINAL_RATIO: f64 = 0.05;
const OPERATOR_BUDGET: Duration = Duration::from_secs(10);

const LIMIT_ENERGY_TOL: f64 = 1e-4;
const LIMIT_REFINE_FACTOR: f64 = 3.5;
const LIMIT_BUDGET: Duration = Duration::from_secs(30);

const SLAVING_TOL: f64 = 1e-10;

const SCALED_ENERGY_TOL: f64 = 1e-5;
const SCALED_REFINE_FACTOR: f64 = 4.0;
const SCALED_BUDGET: Duration = Duration::from_secs(60);

const SLOPE_RANGE: (f64, f64) = (0.8, 1.3);
const KINETIC_FLOOR: f64 = 1e-2;
const GAP_SLACK: f64 = 1.05;
const GAP_REDUCTION: f64 = 0.25;
const SWEEP_BUDGET: Duration = Duration::from_secs(15 * 60);

const RENORM_TOL: f64 = 1e-5;
const RENORM_REFINE_FACTOR: f64 = 4.0;
const MASS_MATCH_TOL: f64 = 1e-12;

const PRESSURE_TOL: f64 = 1e-9;
const PRESSURE_LADDER: [f64; 3] = [4.0, 8.0, 16.0];
const INTEGRABILITY_SPREAD: f64 = 3.0;

const EXIT_CONFIG: i32 = 1;
const EXIT_GATE: i32 = 3;

/// Step bound used by the refinement pairs, as a multiple of the cell width.
/// It matches the step the default run takes on its own at n = 64.
const REFINE_DT_PER_H: f64 = 0.1;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Self { pass: false, detail: detail.into() }
    }
}

fn report(id: usize, name: &str, o: &Outcome) {
    println!("criterion {id} {:<4} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn binary() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_inertia-lab"));
    c.env_remove("INERTIA_LAB_OUT");
    c
}

/// Ordinary least squares slope of `ln y` on `ln x`.
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn field_max(f: &ScalarField) -> f64 {
    max_of(f.values())
}

// ---------------------------------------------------------------------------

fn operators() -> Outcome {
    let start = Instant::now();
    let out = match binary().args(["verify-operators", "--json"]).output() {
        Ok(o) => o,
        Err(e) => return Outcome::fail(format!("cannot launch binary: {e}")),
    };
    let elapsed = start.elapsed();
    let reports: serde_json::Value = match serde_json::from_slice(&out.stdout) {
        Ok(v) => v,
        Err(e) => return Outcome::fail(format!("unreadable output: {e}")),
    };
    let find = |name: &str| {
        reports
            .as_array()
            .and_then(|a| a.iter().find(|r| r["check"] == name))
            .map(|r| r["values"].clone())
            .unwrap_or(serde_json::Value::Null)
    };
    let num = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);

    let div = num(&find("bogovskii_divergence")["max_abs_error"]);
    let proj = (num(&find("bogovskii_l2_projection")["grad_norm_over_centered_norm"]) - 1.0).abs();
    let lame = num(&find("lame_round_trip")["relative_sup_error"]);

    let rows = find("mollifier_mean_preservation")["ladder"].as_array().cloned().unwrap_or_default();
    let ms: Vec<f64> = rows.iter().map(|r| num(&r["m"])).collect();
    let mean_shift = max_of(&rows.iter().map(|r| num(&r["mean_shift"])).collect::<Vec<_>>());
    let growth = max_of(&rows.iter().map(|r| num(&r["l2_change"])).collect::<Vec<_>>());
    let ladder_ok = ms.first() == Some(&2.0) && ms.last() == Some(&64.0);

    let comm: Vec<f64> = find("friedrichs_commutator_decay")["ladder"]
        .as_array()
        .map(|a| a.iter().map(|r| num(&r["total"])).collect())
        .unwrap_or_default();
    let strictly = comm.len() >= 2 && comm.windows(2).all(|w| w[1] < w[0]);
    let ratio = comm.last().zip(comm.first()).map(|(l, f)| l / f).unwrap_or(f64::INFINITY);

    let pass = out.status.code() == Some(0)
        && elapsed < OPERATOR_BUDGET
        && div <= BOGOVSKII_TOL
        && proj <= BOGOVSKII_TOL
        && lame <= LAME_TOL
        && ladder_ok
        && mean_shift <= MOLLIFIER_TOL
        && growth <= MOLLIFIER_TOL
        && strictly
        && ratio <= COMMUTATOR_FINAL_RATIO;
    Outcome::new(
        pass,
        format!(
            "div {div:.2e}, projection {proj:.2e}, lame {lame:.2e}, mean shift {mean_shift:.2e}, \
             l2 change {growth:.2e}, commutator strictly decreasing {strictly} final/initial {ratio:.3e}, {elapsed:.2?}"
        ),
    )
}

struct LimitRuns {
    base: RunRecord,
    base_params: FluidParams,
    base_time: Duration,
    coarse: RunRecord,
    fine: RunRecord,
}

fn limit_runs() -> LimitRuns {
    let cfg = load("limit_energy.json");
    let grid = cfg.build_grid();
    let rho0 = cfg.initial_density.sample(&grid);
    let control = StepControl::new(cfg.control.cfl, cfg.control.dt_max, cfg.control.t_end, cfg.control.checkpoint_times.clone())
        .recording_steps();
    let start = Instant::now();
    let base = run_limit(&LimitState::new(rho0), &cfg.params, &control).expect("criterion-2 run");
    let base_time = start.elapsed();

    let refined = |n: usize| {
        let g = TorusGrid::new(grid.dim(), n).expect("grid");
        let c = StepControl::new(control.cfl, REFINE_DT_PER_H * g.spacing(), control.t_end, control.checkpoint_times.clone())
            .recording_steps();
        run_limit(&LimitState::new(cfg.initial_density.sample(&g)), &cfg.params, &c).expect("refinement run")
    };
    LimitRuns {
        base,
        base_params: cfg.params,
        base_time,
        coarse: refined(grid.n()),
        fine: refined(2 * grid.n()),
    }
}

fn relative_q(rec: &RunRecord) -> f64 {
    rec.max_abs_residual() / rec.initial_budget().internal
}

fn limit_energy(runs: &LimitRuns) -> Outcome {
    let q = relative_q(&runs.base);
    let (qc, qf) = (relative_q(&runs.coarse), relative_q(&runs.fine));
    let factor = qc / qf;
    Outcome::new(
        q <= LIMIT_ENERGY_TOL && factor >= LIMIT_REFINE_FACTOR && runs.base_time < LIMIT_BUDGET,
        format!(
            "max|q|/internal0 {q:.3e} ({} steps, {:.2?}); refinement {qc:.3e} -> {qf:.3e}, factor {factor:.2}",
            runs.base.audit.steps, runs.base_time
        ),
    )
}

fn slaving(runs: &LimitRuns) -> Outcome {
    let audited = [&runs.base, &runs.coarse, &runs.fine]
        .iter()
        .map(|r| r.audit.slaving_defect)
        .fold(0.0, f64::max);
    // Recheck every recorded velocity directly.
    let mut rechecked: f64 = 0.0;
    for s in &runs.base.trajectory {
        rechecked = rechecked.max(slaving_defect(&s.rho, &s.velocity, &runs.base_params).expect("defect"));
    }
    Outcome::new(
        audited <= SLAVING_TOL && rechecked <= SLAVING_TOL,
        format!(
            "audited max {audited:.3e}, recheck over {} velocities {rechecked:.3e}",
            runs.base.trajectory.len()
        ),
    )
}

fn scaled_energy() -> Outcome {
    let cfg = load("scaled_energy.json");
    let control = StepControl::new(cfg.control.cfl, cfg.control.dt_max, cfg.control.t_end, cfg.control.checkpoint_times.clone());
    let run = |n: usize| {
        let g = TorusGrid::new(cfg.grid.dim, n).expect("grid");
        let rho = cfg.initial_density.sample(&g);
        let u = cfg.initial_velocity.sample(&rho, &cfg.params).expect("velocity");
        let start = Instant::now();
        let rec = run_scaled(&ScaledState::from_velocity(rho, &u), &cfg.params, &control).expect("scaled run");
        (rec, start.elapsed())
    };
    let (fine, time) = run(cfg.grid.n);
    let (coarse, _) = run(cfg.grid.n / 2);
    let e0 = fine.initial_budget().energy();
    let positive = fine.max_positive_residual() / e0;
    let (rc, rf) = (coarse.max_abs_residual() / coarse.initial_budget().energy(), fine.max_abs_residual() / e0);
    let factor = rc / rf;
    Outcome::new(
        positive <= SCALED_ENERGY_TOL && factor >= SCALED_REFINE_FACTOR && time < SCALED_BUDGET,
        format!(
            "max(0,r)/E0 {positive:.3e} ({} steps, {time:.2?}); |r| refinement {rc:.3e} -> {rf:.3e}, factor {factor:.1}",
            fine.audit.steps
        ),
    )
}

fn sweep() -> (SweepRecord, Duration) {
    let cfg = load("certified_sweep.json");
    let sc = SweepConfig::from_run_config(&cfg).expect("sweep config");
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let start = Instant::now();
    let rec = epsilon_sweep(&sc, workers).expect("certified sweep");
    (rec, start.elapsed())
}

fn inertial_limit(rec: &SweepRecord, time: Duration) -> Outcome {
    if !rec.gate.pass {
        return Outcome::fail("well-preparedness gate failed");
    }
    if rec.successful().count() != rec.entries.len() {
        return Outcome::fail("a sweep run failed");
    }
    let mut detail = Vec::new();
    let mut pass = time < SWEEP_BUDGET;

    for &t in &rec.config.base.control.checkpoint_times {
        // Entries ordered by decreasing epsilon.
        let mut k = rec.kinetic_at(t);
        k.sort_by(|a, b| b.0.total_cmp(&a.0));
        let decreasing = k.windows(2).all(|w| w[1].1 < w[0].1);
        let slope = loglog_slope(&k);
        let ok = k.len() == rec.entries.len() && decreasing && (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&slope);
        pass &= ok;
        detail.push(format!("K@{t}: decreasing {decreasing} slope {slope:.3}"));
    }

    let t_end = rec.config.base.control.t_end;
    let mut k_end = rec.kinetic_at(t_end);
    k_end.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (eps_min, k_min) = k_end[0];
    let floor = KINETIC_FLOOR * rec.reference.internal0;
    pass &= k_min <= floor;
    detail.push(format!("K({eps_min:.0e},T) {k_min:.3e} <= {floor:.3e}: {}", k_min <= floor));

    let mut g = rec.gap_at(t_end);
    g.sort_by(|a, b| b.0.total_cmp(&a.0));
    let slack_ok = g.windows(2).all(|w| w[1].1 <= GAP_SLACK * w[0].1);
    let reduction = g.last().unwrap().1 / g[0].1;
    pass &= slack_ok && reduction <= GAP_REDUCTION;
    let gaps: Vec<String> = g.iter().map(|(_, v)| format!("{v:.3e}")).collect();
    detail.push(format!(
        "G(T) [{}] non-increasing within slack {slack_ok}, G(min)/G(max) {reduction:.3}",
        gaps.join(", ")
    ));
    detail.push(format!("{time:.1?}"));
    Outcome::new(pass, detail.join("; "))
}

fn renormalized(runs: &LimitRuns) -> Outcome {
    let t_end = runs.base.control.t_end;
    let grid = runs.base.snapshots[0].rho.grid().clone();
    let bank = TestBank::standard(&grid, t_end).expect("bank");
    // Cutoff above the data range, so b stays on its smooth power branch.
    let b = RenormalizerB::new(2.0, 2.0).expect("renormalizer");
    let res = renormalization_residual(&runs.base.trajectory, &b, &bank).expect("residual");

    let coarse_bank = TestBank::standard(runs.coarse.trajectory[0].rho.grid(), t_end).expect("bank");
    let fine_bank = TestBank::standard(runs.fine.trajectory[0].rho.grid(), t_end).expect("bank");
    let rc = renormalization_residual(&runs.coarse.trajectory, &b, &coarse_bank).expect("residual");
    let rf = renormalization_residual(&runs.fine.trajectory, &b, &fine_bank).expect("residual");
    let factor = rc / rf;

    let rho_max = runs.base.trajectory.iter().map(|s| field_max(&s.rho)).fold(1.0, f64::max);
    let linear = RenormalizerB::new(2.0 * rho_max, 1.0).expect("linear renormalizer");
    let lin = renormalization_residual(&runs.base.trajectory, &linear, &bank).expect("residual");
    let cont = continuity_residual(&runs.base.trajectory, &bank).expect("residual");
    let mass_bank = TestBank { spatial: vec![ScalarField::constant(&grid, 1.0)], windows: bank.windows.clone() };
    let mass_res = renormalization_residual(&runs.base.trajectory, &linear, &mass_bank).expect("residual");
    let drift = runs.base.audit.mass_drift;
    let linear_ok = (lin - cont).abs() <= MASS_MATCH_TOL && mass_res <= MASS_MATCH_TOL && drift <= MASS_MATCH_TOL;

    Outcome::new(
        res <= RENORM_TOL && factor >= RENORM_REFINE_FACTOR && linear_ok,
        format!(
            "residual {res:.3e}; refinement {rc:.3e} -> {rf:.3e}, factor {factor:.2}; \
             b(z)=z vs continuity {:.1e}, mass-only {mass_res:.1e}, mass drift {drift:.1e}",
            (lin - cont).abs()
        ),
    )
}

fn pressure_bound(runs: &LimitRuns, rec: &SweepRecord) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let t_end = runs.base.control.t_end;
    // Interior checkpoints only; the time cutoff vanishes at both ends.
    for s in runs.base.snapshots.iter().filter(|s| s.t > 0.0 && s.t < t_end) {
        for &m in &PRESSURE_LADDER {
            let id = pressure_identity_check(&s.rho, &s.velocity, &runs.base_params, MollifierIndex::new(m).expect("m"))
                .expect("identity");
            worst = worst.max(id.residual);
            count += 1;
        }
    }
    let values: Vec<f64> = rec.integrability.iter().map(|r| r.value).collect();
    let spread = max_of(&values) / values.iter().cloned().fold(f64::INFINITY, f64::min);
    let complete = values.len() == rec.entries.len() && values.iter().all(|v| v.is_finite() && *v > 0.0);
    Outcome::new(
        worst <= PRESSURE_TOL && complete && spread <= INTEGRABILITY_SPREAD,
        format!("identity residual max {worst:.3e} over {count} checks; integrability spread {spread:.4}"),
    )
}

fn negative_controls() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let ill = binary()
        .args(["sweep", "--config"])
        .arg(config_path("ill_prepared_sweep.json"))
        .arg("--out")
        .arg(tmp.path().join("ill"))
        .output()
        .expect("launch");
    let bad = binary()
        .args(["run-scaled", "--config"])
        .arg(config_path("rejected_3d_gamma.json"))
        .arg("--out")
        .arg(tmp.path().join("bad"))
        .output()
        .expect("launch");
    let parse = RunConfig::load(&config_path("rejected_3d_gamma.json"));
    let (ill_code, bad_code) = (ill.status.code(), bad.status.code());
    Outcome::new(
        ill_code == Some(EXIT_GATE) && bad_code == Some(EXIT_CONFIG) && parse.is_err(),
        format!(
            "ill-prepared sweep exit {ill_code:?}, 3D gamma=1.2 exit {bad_code:?}, parse rejected {}",
            parse.is_err()
        ),
    )
}

fn main() {
    let mut results = Vec::new();
    let mut emit = |id: usize, name: &str, o: Outcome| {
        report(id, name, &o);
        results.push(o.pass);
    };

    emit(1, "operator suite", operators());
    let runs = limit_runs();
    emit(2, "limit energy equality", limit_energy(&runs));
    emit(3, "slaving identity audit", slaving(&runs));
    emit(4, "scaled energy inequality", scaled_energy());
    let (rec, time) = sweep();
    emit(5, "inertial-limit sweep", inertial_limit(&rec, time));
    emit(6, "renormalized continuity", renormalized(&runs));
    emit(7, "pressure-bound identity", pressure_bound(&runs, &rec));
    emit(8, "negative controls", negative_controls());

    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var_os("INERTIA_LAB_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
