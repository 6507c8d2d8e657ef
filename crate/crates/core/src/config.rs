//! Run configuration: a single JSON document, validated as it is parsed.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::field::{FieldError, GridSpec, ScalarField, TorusGrid, VectorField};
use crate::model::{FluidParams, ModelError};
use crate::time::StepControl;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] FieldError),
    #[error(transparent)]
    Params(#[from] ModelError),
    #[error("invalid control: {0}")]
    Control(String),
    #[error("invalid initial data: {0}")]
    Initial(String),
    #[error("invalid sweep: {0}")]
    Sweep(String),
}

/// Named analytic initial densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityProfile {
    Constant { value: f64 },
    /// `a + b Π cos x_i`.
    CosineBump { a: f64, b: f64 },
    /// `background + amplitude Σ exp(-|x - c - 2πj|²/(2 width²))` over the
    /// nearest periodic images `j ∈ {-1,0,1}^d`.
    GaussianBlob {
        background: f64,
        amplitude: f64,
        width: f64,
        #[serde(default = "default_center")]
        center: Vec<f64>,
    },
}

fn default_center() -> Vec<f64> {
    vec![PI; 3]
}

impl DensityProfile {
    /// Analytic lower bound of the profile.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::CosineBump { a, b } => a - b.abs(),
            Self::GaussianBlob {
                background,
                amplitude,
                ..
            } => background + amplitude.min(0.0) * 3f64.powi(3),
        }
    }

    fn validate(&self, dim: usize) -> Result<(), ConfigError> {
        let finite = match self {
            Self::Constant { value } => value.is_finite(),
            Self::CosineBump { a, b } => a.is_finite() && b.is_finite(),
            Self::GaussianBlob {
                background,
                amplitude,
                width,
                center,
            } => {
                if !(*width > 0.0) {
                    return Err(ConfigError::Initial(format!("gaussian width must be positive, got {width}")));
                }
                if center.len() < dim {
                    return Err(ConfigError::Initial(format!(
                        "gaussian center needs {dim} coordinates, got {}",
                        center.len()
                    )));
                }
                background.is_finite() && amplitude.is_finite() && width.is_finite()
            }
        };
        if !finite {
            return Err(ConfigError::Initial("profile parameters must be finite".into()));
        }
        if self.lower_bound() < 0.0 {
            return Err(ConfigError::Initial(format!(
                "profile can go negative (lower bound {})",
                self.lower_bound()
            )));
        }
        Ok(())
    }

    pub fn sample(&self, grid: &TorusGrid) -> ScalarField {
        let d = grid.dim();
        match self {
            Self::Constant { value } => ScalarField::constant(grid, *value),
            Self::CosineBump { a, b } => grid.sample(|x| a + b * x[..d].iter().map(|c| c.cos()).product::<f64>()),
            Self::GaussianBlob {
                background,
                amplitude,
                width,
                center,
            } => grid.sample(|x| {
                let images = 3usize.pow(d as u32);
                let mut sum = 0.0;
                for code in 0..images {
                    let mut c = code;
                    let mut r2 = 0.0;
                    for a in 0..d {
                        let shift = (c % 3) as f64 - 1.0;
                        c /= 3;
                        let dx = x[a] - center[a] - 2.0 * PI * shift;
                        r2 += dx * dx;
                    }
                    sum += (-r2 / (2.0 * width * width)).exp();
                }
                background + amplitude * sum
            }),
        }
    }
}

/// Initial velocity for scaled runs, possibly depending on ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityInit {
    /// `u₀ = 0`.
    #[default]
    ZeroVelocity,
    /// `u₀` solves the limit elliptic balance for `ρ₀`.
    SlavedVelocity,
    /// `u₀ = ε^power · velocity`, a constant vector.
    Constant { velocity: Vec<f64>, epsilon_power: f64 },
}

impl VelocityInit {
    fn validate(&self, dim: usize) -> Result<(), ConfigError> {
        if let Self::Constant {
            velocity,
            epsilon_power,
        } = self
        {
            if velocity.len() != dim || velocity.iter().any(|v| !v.is_finite()) || !epsilon_power.is_finite() {
                return Err(ConfigError::Initial(format!(
                    "constant velocity needs {dim} finite components and a finite epsilon_power"
                )));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rho0: &ScalarField, params: &FluidParams) -> Result<VectorField, crate::scaled::SolverError> {
        let grid = rho0.grid();
        match self {
            Self::ZeroVelocity => Ok(VectorField::zeros(grid)),
            Self::SlavedVelocity => crate::limit::velocity_from_density(rho0, params),
            Self::Constant {
                velocity,
                epsilon_power,
            } => {
                let s = params.epsilon.powf(*epsilon_power);
                let v: Vec<f64> = velocity.iter().map(|c| c * s).collect();
                Ok(VectorField::constant(grid, &v))
            }
        }
    }
}

/// Optional overrides of the pass thresholds printed in run summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// `max|q|/E_int(0)` for limit runs.
    pub limit_energy: f64,
    /// `max(0, r)/E(0)` for scaled runs.
    pub scaled_energy: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            limit_energy: 1e-4,
            scaled_energy: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub params: FluidParams,
    pub control: StepControl,
    pub initial_density: DensityProfile,
    #[serde(default)]
    pub initial_velocity: VelocityInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl RunConfig {
    /// Parse and validate. Every invariant is checked here, before any run.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = TorusGrid::from_spec(self.grid)?;
        self.params.validate(grid.dim())?;
        self.control.validate().map_err(ConfigError::Control)?;
        self.initial_density.validate(grid.dim())?;
        self.initial_velocity.validate(grid.dim())?;
        if let Some(sweep) = &self.sweep {
            if sweep.epsilons.is_empty() {
                return Err(ConfigError::Sweep("epsilons must not be empty".into()));
            }
            if sweep.epsilons.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                return Err(ConfigError::Sweep("every epsilon must be positive and finite".into()));
            }
            if sweep.epsilons.windows(2).any(|w| w[1] >= w[0]) {
                return Err(ConfigError::Sweep("epsilons must be strictly decreasing".into()));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> TorusGrid {
        TorusGrid::from_spec(self.grid).expect("validated at parse time")
    }
}
