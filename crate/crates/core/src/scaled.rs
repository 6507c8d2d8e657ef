//! Explicit pseudo-spectral integration of the ε-scaled system in conservative
//! variables `(ρ, m = ρu)`:
//!
//! ```text
//! ∂t ρ = -div m
//! ∂t m = -div(m⊗m/ρ) - ∇ρ^γ/ε + (νΔu + (ν+λ)∇div u)/ε
//! ```
//!
//! Every right-hand side is projected onto the 2/3-rule band. The cumulative
//! dissipation is carried as an extra ODE unknown so that it is integrated by
//! the same Runge–Kutta stages as the fields.

use num_complex::Complex64;
use thiserror::Error;

use crate::field::{self, integrate, FieldError, ScalarField, TorusGrid, VectorField};
use crate::model::{self, EnergyBudget, FluidParams, ModelError};
use crate::record::{RunAudit, RunKind, RunRecord, Snapshot};
use crate::time::{clip_to_target, ssp_rk3, StepControl};

pub const RHO_FLOOR: f64 = 1e-6;
/// Growth factor of any field norm, relative to the initial state, that counts as blow-up.
pub const BLOW_UP_FACTOR: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("density {value:e} below floor at lattice point {index}")]
    FloorViolation { index: usize, value: f64 },
    #[error("solution blew up at t = {time}: {what}")]
    BlowUp { time: f64, what: String },
    #[error("epsilon must be positive for the scaled system, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("invalid step control: {0}")]
    Control(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone)]
pub struct ScaledState {
    pub rho: ScalarField,
    pub mom: VectorField,
    pub t: f64,
}

impl ScaledState {
    pub fn new(rho: ScalarField, mom: VectorField, t: f64) -> Self {
        Self { rho, mom, t }
    }

    /// State with momentum `ρ u`.
    pub fn from_velocity(rho: ScalarField, u: &VectorField) -> Self {
        let mom = u.times(&rho);
        Self { rho, mom, t: 0.0 }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.rho.grid()
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.rho)
    }

    fn pack(&self, dissipation: f64) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.grid().len() * (1 + self.grid().dim()) + 1);
        y.extend_from_slice(self.rho.values());
        for c in self.mom.components() {
            y.extend_from_slice(c.values());
        }
        y.push(dissipation);
        y
    }

    fn unpack(grid: &TorusGrid, y: &[f64], t: f64) -> (Self, f64) {
        let len = grid.len();
        let rho = ScalarField::new(grid, y[..len].to_vec()).expect("length matches grid");
        let mom = VectorField::new(
            (0..grid.dim())
                .map(|a| {
                    ScalarField::new(grid, y[(a + 1) * len..(a + 2) * len].to_vec())
                        .expect("length matches grid")
                })
                .collect(),
        )
        .expect("components share the grid");
        (Self { rho, mom, t }, y[y.len() - 1])
    }
}

fn check_floor(rho: &[f64]) -> Result<(), SolverError> {
    match rho
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= RHO_FLOOR))
    {
        Some((index, &value)) => Err(SolverError::FloorViolation { index, value }),
        None => Ok(()),
    }
}

/// Pointwise `u = m/ρ`.
pub fn velocity_of(state: &ScaledState) -> Result<VectorField, SolverError> {
    check_floor(state.rho.values())?;
    Ok(state.mom.map(|c| c.zip_map(&state.rho, |m, r| m / r)))
}

/// Right-hand side on raw slices; returns `(dρ, dm_1.., dD)` flattened.
fn rhs_flat(
    grid: &TorusGrid,
    params: &FluidParams,
    y: &[f64],
) -> Result<Vec<f64>, SolverError> {
    let len = grid.len();
    let dim = grid.dim();
    let rho = &y[..len];
    check_floor(rho)?;
    let mom: Vec<&[f64]> = (0..dim).map(|a| &y[(a + 1) * len..(a + 2) * len]).collect();
    let vel: Vec<Vec<f64>> = mom
        .iter()
        .map(|m| m.iter().zip(rho).map(|(m, r)| m / r).collect())
        .collect();
    let inv_eps = 1.0 / params.epsilon;

    let mom_hat: Vec<Vec<Complex64>> = mom.iter().map(|m| grid.forward(m)).collect();
    let mut vel_hat: Vec<Vec<Complex64>> = vel.iter().map(|u| grid.forward(u)).collect();
    for v in vel_hat.iter_mut() {
        grid.truncate(v);
    }
    let p: Vec<f64> = rho.iter().map(|&r| model::pow_gamma(r, params.gamma)).collect();
    let p_hat = grid.forward(&p);
    let visc = field::lame_apply_spectral(grid, &vel_hat, params.nu, params.lambda);

    let mut out = Vec::with_capacity(y.len());

    let mut drho = vec![Complex64::new(0.0, 0.0); len];
    for (a, m) in mom_hat.iter().enumerate() {
        let d = grid.spectral_derivative(m, a);
        for (o, v) in drho.iter_mut().zip(d) {
            *o -= v;
        }
    }
    grid.truncate(&mut drho);
    out.extend(grid.inverse(drho));

    // Convective flux F_lj = m_l u_j is symmetric; transform each pair once.
    let mut flux_hat = vec![vec![Vec::new(); dim]; dim];
    for l in 0..dim {
        for j in l..dim {
            let f: Vec<f64> = mom[l].iter().zip(&vel[j]).map(|(m, u)| m * u).collect();
            flux_hat[l][j] = grid.forward(&f);
        }
    }
    for j in 0..dim {
        let mut dm: Vec<Complex64> = grid
            .spectral_derivative(&p_hat, j)
            .into_iter()
            .zip(&visc[j])
            .map(|(gp, v)| (v - gp) * inv_eps)
            .collect();
        for l in 0..dim {
            let f = if l <= j { &flux_hat[l][j] } else { &flux_hat[j][l] };
            for (o, v) in dm.iter_mut().zip(grid.spectral_derivative(f, l)) {
                *o -= v;
            }
        }
        grid.truncate(&mut dm);
        out.extend(grid.inverse(dm));
    }

    out.push(spectral_dissipation(grid, &vel_hat, params.nu, params.lambda));
    Ok(out)
}

/// Dissipation rate from velocity spectra, equal to the lattice quadrature of
/// `ν|∇u|² + (ν+λ)|div u|²` by discrete Parseval.
pub(crate) fn spectral_dissipation(
    grid: &TorusGrid,
    vel_hat: &[Vec<Complex64>],
    nu: f64,
    lambda: f64,
) -> f64 {
    let dim = grid.dim();
    let mut shear = 0.0;
    let mut div = 0.0;
    for idx in 0..grid.len() {
        let mut kd2 = 0.0;
        let mut kdotu = Complex64::new(0.0, 0.0);
        for a in 0..dim {
            let k = grid.derivative_wavenumbers(a)[idx];
            kd2 += k * k;
            kdotu += vel_hat[a][idx] * k;
        }
        for v in vel_hat {
            shear += kd2 * v[idx].norm_sqr();
        }
        div += kdotu.norm_sqr();
    }
    let n = grid.len() as f64;
    grid.volume() / (n * n) * (nu * shear + (nu + lambda) * div)
}

/// `(dρ/dt, dm/dt)` of the scaled system.
pub fn rhs_scaled(
    state: &ScaledState,
    params: &FluidParams,
) -> Result<(ScalarField, VectorField), SolverError> {
    if !(params.epsilon > 0.0) {
        return Err(SolverError::NonPositiveEpsilon(params.epsilon));
    }
    let grid = state.grid();
    let out = rhs_flat(grid, params, &state.pack(0.0))?;
    let (d, _) = ScaledState::unpack(grid, &out, state.t);
    Ok((d.rho, d.mom))
}

/// Explicit stability bound: acoustic/advective and viscous limits, capped by `dt_max`.
pub fn stable_dt(state: &ScaledState, params: &FluidParams, control: &StepControl) -> f64 {
    let h = state.grid().spacing();
    let rho = state.rho.values();
    let rho_min = state.rho.min().max(RHO_FLOOR);
    let mut speed: f64 = 0.0;
    for (idx, &r) in rho.iter().enumerate() {
        let r = r.max(RHO_FLOOR);
        let u2: f64 = state
            .mom
            .components()
            .iter()
            .map(|c| (c.values()[idx] / r).powi(2))
            .sum();
        let c = (params.gamma * r.powf(params.gamma - 1.0) / params.epsilon).sqrt();
        speed = speed.max(u2.sqrt() + c);
    }
    let advective = h / speed;
    let viscous = params.epsilon * rho_min * h * h / (4.0 * params.longitudinal());
    (control.cfl * advective.min(viscous)).min(control.dt_max)
}

/// Restore `ρ ≥ RHO_FLOOR` while conserving mass; returns the number of clamped cells.
fn enforce_floor(rho: &mut [f64]) -> usize {
    let mut deficit = 0.0;
    let mut clamped = 0;
    for r in rho.iter_mut() {
        if *r < RHO_FLOOR {
            deficit += RHO_FLOOR - *r;
            *r = RHO_FLOOR;
            clamped += 1;
        }
    }
    if clamped == 0 {
        return 0;
    }
    let excess: f64 = rho.iter().map(|&r| r - RHO_FLOOR).sum();
    if excess > deficit {
        let scale = deficit / excess;
        for r in rho.iter_mut() {
            *r -= (*r - RHO_FLOOR) * scale;
        }
    }
    clamped
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Reference magnitudes used for blow-up detection.
#[derive(Debug, Clone, Copy)]
struct Scale {
    rho: f64,
    mom: f64,
}

impl Scale {
    fn of(state: &ScaledState) -> Self {
        let rho = state.rho.sup_norm();
        Self {
            rho,
            mom: state.mom.sup_norm().max(rho),
        }
    }

    fn check(&self, y: &[f64], len: usize, t: f64) -> Result<(), SolverError> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::BlowUp {
                time: t,
                what: "non-finite value".into(),
            });
        }
        if sup(&y[..len]) > BLOW_UP_FACTOR * self.rho {
            return Err(SolverError::BlowUp {
                time: t,
                what: "density norm".into(),
            });
        }
        if sup(&y[len..y.len() - 1]) > BLOW_UP_FACTOR * self.mom {
            return Err(SolverError::BlowUp {
                time: t,
                what: "momentum norm".into(),
            });
        }
        Ok(())
    }
}

/// One SSP-RK3 step; the density floor is restored conservatively afterwards.
/// Returns the new state, the dissipation accumulated over the step and the
/// number of floor activations.
fn advance(
    state: &ScaledState,
    params: &FluidParams,
    dt: f64,
    scale: Scale,
) -> Result<(ScaledState, f64, usize), SolverError> {
    let grid = state.grid();
    let y = state.pack(0.0);
    let mut next = ssp_rk3(&y, dt, |v| rhs_flat(grid, params, v))?;
    let len = grid.len();
    let clamped = enforce_floor(&mut next[..len]);
    scale.check(&next, len, state.t + dt)?;
    let (s, d) = ScaledState::unpack(grid, &next, state.t + dt);
    Ok((s, d, clamped))
}

/// One SSP-RK3 step of size `dt` (negative `dt` integrates backwards).
pub fn step(state: &ScaledState, params: &FluidParams, dt: f64) -> Result<ScaledState, SolverError> {
    if !(params.epsilon > 0.0) {
        return Err(SolverError::NonPositiveEpsilon(params.epsilon));
    }
    advance(state, params, dt, Scale::of(state)).map(|(s, _, _)| s)
}

pub fn budget(state: &ScaledState, params: &FluidParams, dissipation_cum: f64) -> Result<EnergyBudget, SolverError> {
    let u = velocity_of(state)?;
    Ok(EnergyBudget {
        time: state.t,
        kinetic_scaled: model::kinetic_energy_scaled(&state.rho, &u, params.epsilon),
        internal: model::internal_energy(&state.rho, params.gamma)?,
        dissipation_cum,
    })
}

fn snapshot(state: &ScaledState) -> Result<Snapshot, SolverError> {
    Ok(Snapshot {
        t: state.t,
        rho: state.rho.clone(),
        velocity: velocity_of(state)?,
        momentum: Some(state.mom.clone()),
    })
}

fn momentum_integral(state: &ScaledState) -> Vec<f64> {
    state.mom.components().iter().map(integrate).collect()
}

/// Integrate to `control.t_end`, recording budgets, the energy residual
/// `r(t) = E(t) + D_cum(t) - E(0)` and fields at every output instant.
pub fn run_scaled(
    init: &ScaledState,
    params: &FluidParams,
    control: &StepControl,
) -> Result<RunRecord, SolverError> {
    if !(params.epsilon > 0.0) {
        return Err(SolverError::NonPositiveEpsilon(params.epsilon));
    }
    params.validate(init.grid().dim())?;
    control.validate().map_err(SolverError::Control)?;
    check_floor(init.rho.values())?;

    let scale = Scale::of(init);
    let mass0 = init.mass();
    let mom0 = momentum_integral(init);
    let b0 = budget(init, params, 0.0)?;
    let e0 = b0.energy();
    let mut record = RunRecord {
        kind: RunKind::Scaled,
        grid: init.grid().spec(),
        params: *params,
        control: control.clone(),
        budgets: vec![b0],
        residuals: vec![0.0],
        snapshots: vec![snapshot(init)?],
        trajectory: Vec::new(),
        audit: RunAudit {
            min_density: init.rho.min(),
            ..RunAudit::default()
        },
    };
    if control.record_steps {
        record.trajectory.push(snapshot(init)?);
    }

    let mut state = init.clone();
    let mut dissipation = 0.0;
    for target in control.output_times() {
        while state.t < target {
            let dt = stable_dt(&state, params, control);
            let (dt, hit) = clip_to_target(state.t, dt, target);
            let (mut next, dd, clamped) = advance(&state, params, dt, scale)?;
            if hit {
                next.t = target;
            }
            if clamped > 0 {
                log::warn!("density floor activated in {clamped} cells at t = {}", next.t);
            }
            record.audit.floor_activations += clamped;
            record.audit.steps += 1;
            dissipation += dd;
            state = next;

            let mass = state.mass();
            record.audit.mass_drift = record.audit.mass_drift.max((mass - mass0).abs() / mass0);
            let drift = momentum_integral(&state)
                .iter()
                .zip(&mom0)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            record.audit.momentum_drift = record.audit.momentum_drift.max(drift);
            record.audit.min_density = record.audit.min_density.min(state.rho.min());
            if control.record_steps {
                record.trajectory.push(snapshot(&state)?);
            }
        }
        let b = budget(&state, params, dissipation)?;
        record.residuals.push(b.total() - e0);
        record.budgets.push(b);
        record.snapshots.push(snapshot(&state)?);
    }
    Ok(record)
}
