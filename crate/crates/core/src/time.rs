//! Shu–Osher SSP-RK3 on flat state vectors, plus checkpoint-aware stepping control.

use serde::{Deserialize, Serialize};

/// One SSP-RK3 step of `y' = L(y)`:
///
/// ```text
/// y1 = y + dt L(y)
/// y2 = 3/4 y + 1/4 (y1 + dt L(y1))
/// y' = 1/3 y + 2/3 (y2 + dt L(y2))
/// ```
pub fn ssp_rk3<E>(
    y: &[f64],
    dt: f64,
    mut rhs: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
) -> Result<Vec<f64>, E> {
    let l0 = rhs(y)?;
    let y1: Vec<f64> = y.iter().zip(&l0).map(|(a, b)| a + dt * b).collect();
    let l1 = rhs(&y1)?;
    let y2: Vec<f64> = y
        .iter()
        .zip(&y1)
        .zip(&l1)
        .map(|((a, b), c)| 0.75 * a + 0.25 * (b + dt * c))
        .collect();
    let l2 = rhs(&y2)?;
    Ok(y
        .iter()
        .zip(&y2)
        .zip(&l2)
        .map(|((a, b), c)| a / 3.0 + 2.0 / 3.0 * (b + dt * c))
        .collect())
}

/// Time-stepping control shared by both solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepControl {
    pub cfl: f64,
    pub dt_max: f64,
    pub t_end: f64,
    #[serde(default)]
    pub checkpoint_times: Vec<f64>,
    /// Keep a snapshot after every step (needed by space-time residuals).
    #[serde(default)]
    pub record_steps: bool,
}

impl StepControl {
    pub fn new(cfl: f64, dt_max: f64, t_end: f64, checkpoint_times: Vec<f64>) -> Self {
        Self {
            cfl,
            dt_max,
            t_end,
            checkpoint_times,
            record_steps: false,
        }
    }

    pub fn recording_steps(mut self) -> Self {
        self.record_steps = true;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(format!("cfl must lie in (0, 1], got {}", self.cfl));
        }
        if !(self.dt_max > 0.0) {
            return Err(format!("dt_max must be positive, got {}", self.dt_max));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(format!("t_end must be positive and finite, got {}", self.t_end));
        }
        if self.checkpoint_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err("checkpoint_times must be strictly increasing".into());
        }
        if self
            .checkpoint_times
            .iter()
            .any(|&t| !(t > 0.0) || t > self.t_end)
        {
            return Err("checkpoint_times must lie in (0, t_end]".into());
        }
        Ok(())
    }

    /// Output instants: every checkpoint plus `t_end`, sorted, without duplicates.
    pub fn output_times(&self) -> Vec<f64> {
        let mut out = self.checkpoint_times.clone();
        if out.last().is_none_or(|&t| t < self.t_end) {
            out.push(self.t_end);
        }
        out
    }
}

/// Clip `dt` so that the step lands exactly on `target` when it would reach it.
/// Returns the clipped step and whether the target is hit.
pub fn clip_to_target(t: f64, dt: f64, target: f64) -> (f64, bool) {
    let remaining = target - t;
    if dt >= remaining * (1.0 - 1e-12) {
        (remaining, true)
    } else if dt > 0.5 * remaining {
        // Split the remainder evenly instead of leaving a sliver step.
        (0.5 * remaining, false)
    } else {
        (dt, false)
    }
}
