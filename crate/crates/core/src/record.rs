//! Trajectory records produced by both solvers.

use serde::{Deserialize, Serialize};

use crate::field::{GridSpec, ScalarField, VectorField};
use crate::model::{EnergyBudget, FluidParams};
use crate::time::StepControl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Scaled,
    Limit,
}

/// Fields at one instant. `momentum` is only present for scaled runs.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub rho: ScalarField,
    pub velocity: VectorField,
    pub momentum: Option<VectorField>,
}

/// Scalar diagnostics gathered while integrating.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub steps: usize,
    /// `max_t |∫ρ(t) - ∫ρ(0)| / ∫ρ(0)`.
    pub mass_drift: f64,
    /// `max_t |∫m(t) - ∫m(0)|`, scaled runs only.
    pub momentum_drift: f64,
    pub floor_activations: usize,
    /// Worst relative defect of `∫ρ^γ div u = dissipation` (limit runs).
    pub slaving_defect: f64,
    pub min_density: f64,
}

/// Energy budgets at every output instant, the matching energy residuals,
/// and the recorded fields.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub kind: RunKind,
    pub grid: GridSpec,
    pub params: FluidParams,
    pub control: StepControl,
    pub budgets: Vec<EnergyBudget>,
    /// `r(t)` for scaled runs, `q(t)` for limit runs, one per budget row.
    pub residuals: Vec<f64>,
    /// Fields at `t = 0` and every output instant.
    pub snapshots: Vec<Snapshot>,
    /// Fields after every step, when `control.record_steps` is set.
    pub trajectory: Vec<Snapshot>,
    pub audit: RunAudit,
}

impl RunRecord {
    pub fn initial_budget(&self) -> &EnergyBudget {
        &self.budgets[0]
    }

    pub fn final_budget(&self) -> &EnergyBudget {
        self.budgets.last().expect("record has at least the initial budget")
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn max_positive_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(*r))
    }

    /// Snapshot at time `t`, matched to a relative tolerance of 1e-9.
    pub fn snapshot_at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
    }

    pub fn budget_at(&self, t: f64) -> Option<&EnergyBudget> {
        self.budgets
            .iter()
            .find(|b| (b.time - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}
