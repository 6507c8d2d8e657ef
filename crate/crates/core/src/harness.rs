//! ε-sweeps of the scaled solver against one limit-solver reference, with the
//! kinetic-energy and density-gap metrics, log-log rate fits and certificates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, IntegrabilityProbe, IntegrabilityRow};
use crate::config::{ConfigError, RunConfig, VelocityInit};
use crate::field::{integrate, l1_distance, TorusGrid};
use crate::limit::{run_limit, LimitState};
use crate::model::{self, FluidParams};
use crate::record::RunRecord;
use crate::scaled::{run_scaled, ScaledState, SolverError};
use crate::time::StepControl;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("ill-prepared initial data: ε∫ρ₀|u₀|² = {values:?} does not vanish with ε")]
    IllPreparedData { values: Vec<(f64, f64)> },
    #[error("need at least 3 points for a fit, got {0}")]
    TooFewPoints(usize),
    #[error("log-log fit needs positive values, got {value} at ε = {epsilon}")]
    NonPositiveValue { epsilon: f64, value: f64 },
    #[error("config has no sweep section")]
    MissingSweep,
    #[error("limit reference failed: {0}")]
    Reference(SolverError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Everything a sweep needs; built from a [`RunConfig`] with a sweep section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub base: RunConfig,
}

impl SweepConfig {
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let sweep = cfg.sweep.as_ref().ok_or(HarnessError::MissingSweep)?;
        Ok(Self {
            epsilons: sweep.epsilons.clone(),
            base: cfg.clone(),
        })
    }

    fn params(&self, epsilon: f64) -> FluidParams {
        self.base.params.with_epsilon(epsilon)
    }

    /// SHA-256 of the canonical JSON of the configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// Outcome of the well-preparedness gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    /// `(ε, ε∫ρ₀|u₀|²)` in sweep order.
    pub values: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Passes iff `ε∫ρ₀|u₀|²` is non-increasing along the sweep and its last value is at
/// most 1% of its largest.
pub fn check_well_prepared(cfg: &SweepConfig) -> Result<GateReport, HarnessError> {
    let grid = cfg.base.build_grid();
    let rho0 = cfg.base.initial_density.sample(&grid);
    let values = cfg
        .epsilons
        .iter()
        .map(|&eps| {
            let u0 = cfg
                .base
                .initial_velocity
                .sample(&rho0, &cfg.params(eps))
                .map_err(HarnessError::Reference)?;
            Ok((eps, model::well_preparedness(&rho0, &u0, eps)))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let v: Vec<f64> = values.iter().map(|p| p.1).collect();
    let decreasing = v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let largest = v.iter().cloned().fold(0.0, f64::max);
    let last = *v.last().unwrap_or(&0.0);
    let pass = decreasing && last <= 0.01 * largest * (1.0 + 1e-12);
    Ok(GateReport { values, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { message: String },
}

/// Metrics of one scaled run, sampled at the sweep's output times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEntry {
    pub epsilon: f64,
    pub status: RunStatus,
    pub well_preparedness: f64,
    pub times: Vec<f64>,
    /// `K(ε, t) = ε∫ρ|u|²`.
    pub kinetic: Vec<f64>,
    /// `G(ε, t) = ‖ρ_ε(t) - ρ_lim(t)‖₁`.
    pub l1_gap: Vec<f64>,
    /// `r(t) = E(t) + D(t) - E(0)`.
    pub energy_residual: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub quantity: String,
    pub t: f64,
    pub slope: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub internal0: f64,
    pub max_abs_q: f64,
    pub steps: usize,
    pub slaving_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub config_hash: String,
    pub crate_version: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config: SweepConfig,
    pub gate: GateReport,
    pub reference: ReferenceSummary,
    pub entries: Vec<EpsilonEntry>,
    pub fits: Vec<Fit>,
    /// `∫₀^T∫ρ^{γ+θ}` per successful run, with `θ = 2γ/3 - 1` (0 if that is negative).
    pub integrability: Vec<IntegrabilityRow>,
    pub manifest: SweepManifest,
}

impl SweepRecord {
    pub fn successful(&self) -> impl Iterator<Item = &EpsilonEntry> {
        self.entries.iter().filter(|e| e.status == RunStatus::Ok)
    }

    /// `(ε, K(ε, t))` for every successful run.
    pub fn kinetic_at(&self, t: f64) -> Vec<(f64, f64)> {
        self.series_at(t, |e| &e.kinetic)
    }

    pub fn gap_at(&self, t: f64) -> Vec<(f64, f64)> {
        self.series_at(t, |e| &e.l1_gap)
    }

    fn series_at(&self, t: f64, pick: impl Fn(&EpsilonEntry) -> &Vec<f64>) -> Vec<(f64, f64)> {
        self.successful()
            .filter_map(|e| {
                let k = e.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))?;
                Some((e.epsilon, pick(e)[k]))
            })
            .collect()
    }
}

/// Ordinary least squares of `log(value)` on `log(ε)`: `(slope, stderr)`.
pub fn convergence_rate(points: &[(f64, f64)]) -> Result<(f64, f64), HarnessError> {
    if points.len() < 3 {
        return Err(HarnessError::TooFewPoints(points.len()));
    }
    if let Some(&(epsilon, value)) = points.iter().find(|p| !(p.1 > 0.0) || !(p.0 > 0.0)) {
        return Err(HarnessError::NonPositiveValue { epsilon, value });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub t_star: f64,
    pub kinetic: Vec<(f64, f64)>,
    pub threshold: f64,
    pub pass: bool,
}

/// Passes iff `K(ε, t*)` is non-increasing as ε decreases and
/// `K(smallest ε, t*) <= 10⁻² E_int(0)`.
pub fn kinetic_decay_certificate(record: &SweepRecord, t_star: f64) -> Certificate {
    let kinetic = record.kinetic_at(t_star);
    let threshold = 1e-2 * record.reference.internal0;
    let complete = kinetic.len() == record.entries.len() && !kinetic.is_empty();
    let decreasing = kinetic.windows(2).all(|w| w[1].1 <= w[0].1);
    let small = kinetic.last().is_some_and(|k| k.1 <= threshold);
    Certificate {
        t_star,
        kinetic,
        threshold,
        pass: complete && decreasing && small,
    }
}

fn entry_from(eps: f64, wp: f64, rec: &RunRecord, reference: &RunRecord) -> EpsilonEntry {
    let mut entry = EpsilonEntry {
        epsilon: eps,
        status: RunStatus::Ok,
        well_preparedness: wp,
        times: Vec::new(),
        kinetic: Vec::new(),
        l1_gap: Vec::new(),
        energy_residual: Vec::new(),
        steps: rec.audit.steps,
    };
    for (snap, r) in rec.snapshots.iter().zip(&rec.residuals) {
        let lim = reference
            .snapshot_at(snap.t)
            .expect("limit and scaled runs share output times");
        let k = eps * integrate(&snap.rho.zip_map(&snap.velocity.norm_squared(), |a, b| a * b));
        entry.times.push(snap.t);
        entry.kinetic.push(k);
        entry.l1_gap.push(l1_distance(&snap.rho, &lim.rho));
        entry.energy_residual.push(*r);
    }
    entry
}

fn run_entry(
    cfg: &SweepConfig,
    eps: f64,
    wp: f64,
    rho0: &crate::field::ScalarField,
    reference: &RunRecord,
) -> (EpsilonEntry, Option<RunRecord>) {
    let params = cfg.params(eps);
    let outcome = cfg
        .base
        .initial_velocity
        .sample(rho0, &params)
        .and_then(|u0| run_scaled(&ScaledState::from_velocity(rho0.clone(), &u0), &params, &cfg.base.control));
    match outcome {
        Ok(rec) => (entry_from(eps, wp, &rec, reference), Some(rec)),
        Err(e) => {
            log::warn!("scaled run at epsilon {eps} failed: {e}");
            let entry = EpsilonEntry {
                epsilon: eps,
                status: RunStatus::Failed { message: e.to_string() },
                well_preparedness: wp,
                times: Vec::new(),
                kinetic: Vec::new(),
                l1_gap: Vec::new(),
                energy_residual: Vec::new(),
                steps: 0,
            };
            (entry, None)
        }
    }
}

/// Gate, one limit reference, then one scaled run per ε on at most `workers`
/// threads. A failing scaled run is recorded with its error; the others proceed.
pub fn epsilon_sweep(cfg: &SweepConfig, workers: usize) -> Result<SweepRecord, HarnessError> {
    cfg.base.validate()?;
    let gate = check_well_prepared(cfg)?;
    if !gate.pass {
        return Err(HarnessError::IllPreparedData { values: gate.values });
    }
    let grid: TorusGrid = cfg.base.build_grid();
    let rho0 = cfg.base.initial_density.sample(&grid);
    let control: StepControl = cfg.base.control.clone();
    let reference = run_limit(&LimitState::new(rho0.clone()), &cfg.params(0.0), &control)
        .map_err(HarnessError::Reference)?;

    let workers = workers.clamp(1, cfg.epsilons.len().max(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let runs: Vec<(EpsilonEntry, Option<RunRecord>)> = pool.install(|| {
        cfg.epsilons
            .par_iter()
            .zip(gate.values.par_iter())
            .map(|(&eps, &(_, wp))| run_entry(cfg, eps, wp, &rho0, &reference))
            .collect()
    });

    let theta = IntegrabilityProbe::default_for(cfg.base.params.gamma)
        .or_else(|_| IntegrabilityProbe::new(0.0))?;
    let ok_records: Vec<&RunRecord> = runs.iter().filter_map(|r| r.1.as_ref()).collect();
    let integrability = analysis::higher_integrability(&ok_records, &theta)?;
    let entries: Vec<EpsilonEntry> = runs.into_iter().map(|r| r.0).collect();

    let mut record = SweepRecord {
        config: cfg.clone(),
        gate,
        reference: ReferenceSummary {
            internal0: reference.initial_budget().internal,
            max_abs_q: reference.max_abs_residual(),
            steps: reference.audit.steps,
            slaving_defect: reference.audit.slaving_defect,
        },
        entries,
        fits: Vec::new(),
        integrability,
        manifest: SweepManifest {
            config_hash: cfg.hash(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            note: "Rate windows are regression baselines; the sweep observes the whole ε sequence, \
                   not a subsequence."
                .into(),
        },
    };
    record.fits = fits_for(&record);
    Ok(record)
}

fn fits_for(record: &SweepRecord) -> Vec<Fit> {
    let mut fits = Vec::new();
    for &t in &record.config.base.control.output_times() {
        for (name, points) in [("kinetic", record.kinetic_at(t)), ("l1_gap", record.gap_at(t))] {
            if let Ok((slope, stderr)) = convergence_rate(&points) {
                fits.push(Fit {
                    quantity: name.into(),
                    t,
                    slope,
                    stderr,
                });
            }
        }
    }
    fits
}

/// `true` when the velocity preparation is one of the certified modes.
pub fn is_certified_mode(v: &VelocityInit) -> bool {
    matches!(v, VelocityInit::ZeroVelocity | VelocityInit::SlavedVelocity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DensityProfile, SweepSection, Tolerances};
    use crate::field::GridSpec;
    use approx::assert_abs_diff_eq;

    fn config(epsilons: Vec<f64>, velocity: VelocityInit, density: DensityProfile) -> SweepConfig {
        let base = RunConfig {
            grid: GridSpec { dim: 2, n: 16 },
            params: FluidParams::new(epsilons[0], 0.1, 0.0, 2.0),
            control: StepControl::new(0.5, 1.0, 0.1, vec![0.05]),
            initial_density: density,
            initial_velocity: velocity,
            sweep: Some(SweepSection { epsilons }),
            output_dir: None,
            tolerances: Tolerances::default(),
        };
        SweepConfig::from_run_config(&base).unwrap()
    }

    fn bump() -> DensityProfile {
        DensityProfile::CosineBump { a: 1.0, b: 0.3 }
    }

    #[test]
    fn rates_on_power_laws() {
        let eps = [0.1, 0.03, 0.01, 0.003, 0.001];
        for p in [0.0, 1.0, 2.0] {
            let pts: Vec<_> = eps.iter().map(|&e: &f64| (e, 3.0 * e.powf(p))).collect();
            let (slope, stderr) = convergence_rate(&pts).unwrap();
            assert_abs_diff_eq!(slope, p, epsilon = 1e-10);
            assert!(stderr < 1e-10);
        }
        assert!(matches!(convergence_rate(&[(0.1, 1.0), (0.01, 0.1)]), Err(HarnessError::TooFewPoints(2))));
        assert!(matches!(
            convergence_rate(&[(0.1, 1.0), (0.01, 0.0), (0.001, 0.1)]),
            Err(HarnessError::NonPositiveValue { .. })
        ));
    }

    #[test]
    fn stderr_reflects_scatter() {
        let pts = [(0.1, 0.1), (0.01, 0.02), (0.001, 0.001)];
        let (_, stderr) = convergence_rate(&pts).unwrap();
        assert!(stderr > 0.01);
    }

    #[test]
    fn gate_modes() {
        let eps = vec![0.1, 0.01, 0.001];
        let zero = check_well_prepared(&config(eps.clone(), VelocityInit::ZeroVelocity, bump())).unwrap();
        assert!(zero.pass && zero.values.iter().all(|v| v.1 == 0.0));

        let slaved = check_well_prepared(&config(eps.clone(), VelocityInit::SlavedVelocity, bump())).unwrap();
        assert!(slaved.pass);
        let ratio = slaved.values[0].1 / slaved.values[0].0;
        for (e, v) in &slaved.values {
            assert_abs_diff_eq!(v / e, ratio, epsilon = 1e-12 * ratio);
        }

        let bad = VelocityInit::Constant {
            velocity: vec![1.0, 0.0],
            epsilon_power: -0.5,
        };
        let gate = check_well_prepared(&config(eps, bad.clone(), bump())).unwrap();
        assert!(!gate.pass);
        assert!(!is_certified_mode(&bad));
    }

    #[test]
    fn ill_prepared_sweep_refuses_to_run() {
        let bad = VelocityInit::Constant {
            velocity: vec![1.0, 0.0],
            epsilon_power: -0.5,
        };
        match epsilon_sweep(&config(vec![0.1, 0.01], bad, bump()), 2) {
            Err(HarnessError::IllPreparedData { values }) => assert_eq!(values.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_epsilon_sweep_has_metrics_but_no_fits() {
        let rec = epsilon_sweep(&config(vec![0.1], VelocityInit::ZeroVelocity, bump()), 1).unwrap();
        assert_eq!(rec.entries.len(), 1);
        assert!(rec.fits.is_empty());
        let e = &rec.entries[0];
        assert_eq!(e.times, vec![0.0, 0.05, 0.1]);
        assert_eq!(e.kinetic[0], 0.0);
        assert_eq!(e.l1_gap[0], 0.0);
        assert!(e.kinetic[2] > 0.0);
        assert_eq!(rec.integrability.len(), 1);
    }

    #[test]
    fn equilibrium_sweep_certifies_trivially() {
        let flat = DensityProfile::Constant { value: 1.0 };
        let rec = epsilon_sweep(&config(vec![0.1, 0.05, 0.02], VelocityInit::ZeroVelocity, flat), 2).unwrap();
        for e in &rec.entries {
            assert!(e.kinetic.iter().all(|&k| k == 0.0));
        }
        assert!(kinetic_decay_certificate(&rec, 0.1).pass);
        let vol = TorusGrid::new(2, 16).unwrap().volume();
        for row in &rec.integrability {
            assert_abs_diff_eq!(row.value, 0.1 * vol, epsilon = 1e-12);
        }
    }

    #[test]
    fn sweep_is_deterministic_and_worker_independent() {
        let cfg = config(vec![0.1, 0.05, 0.02], VelocityInit::ZeroVelocity, bump());
        let a = epsilon_sweep(&cfg, 1).unwrap();
        let b = epsilon_sweep(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fits.len(), 4);
    }

    #[test]
    fn per_epsilon_metrics_do_not_depend_on_the_rest_of_the_list() {
        let full = epsilon_sweep(&config(vec![0.1, 0.05, 0.02], VelocityInit::ZeroVelocity, bump()), 3).unwrap();
        let part = epsilon_sweep(&config(vec![0.05, 0.02], VelocityInit::ZeroVelocity, bump()), 1).unwrap();
        assert_eq!(full.entries[1..], part.entries[..]);
        assert_eq!(full.reference, part.reference);
    }

    #[test]
    fn failed_runs_are_marked_not_fatal() {
        let cfg = config(vec![0.1, 0.05], VelocityInit::ZeroVelocity, bump());
        let mut rec = epsilon_sweep(&cfg, 2).unwrap();
        let grid = cfg.base.build_grid();
        let rho0 = cfg.base.initial_density.sample(&grid);
        let reference = run_limit(&LimitState::new(rho0.clone()), &cfg.params(0.0), &cfg.base.control).unwrap();
        // ε = 0 is rejected by the scaled solver
        let (entry, run) = run_entry(&cfg, 0.0, 0.0, &rho0, &reference);
        assert!(run.is_none());
        assert!(matches!(entry.status, RunStatus::Failed { .. }));
        rec.entries[1] = entry;
        assert_eq!(rec.successful().count(), 1);
        assert_eq!(rec.kinetic_at(0.1).len(), 1);
        assert!(!kinetic_decay_certificate(&rec, 0.1).pass);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"status\":\"failed\""));
    }
}
