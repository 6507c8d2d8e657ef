//! The overdamped limit system: density transport `∂t ρ + div(ρu) = 0` with the
//! velocity slaved at every instant to `νΔu + (ν+λ)∇div u = ∇ρ^γ`.
//!
//! Density is advanced by a conservative finite-volume scheme (MUSCL
//! reconstruction with minmod slopes, upwind fluxes) whose face velocities are
//! spectral half-cell interpolants of the slaved velocity. The velocity is
//! re-solved at every Runge–Kutta stage.

use num_complex::Complex64;

use crate::field::{self, integrate, ScalarField, TorusGrid, VectorField};
use crate::model::{self, EnergyBudget, FluidParams};
use crate::record::{RunAudit, RunKind, RunRecord, Snapshot};
use crate::scaled::{spectral_dissipation, SolverError, BLOW_UP_FACTOR};
use crate::time::{clip_to_target, ssp_rk3, StepControl};

/// Added to the speed in the CFL bound so that `u ≡ 0` gives a finite step.
pub const SPEED_SAFETY: f64 = 1e-12;

/// Fraction of the fastest density relaxation time `(2ν+λ)/(γ max ρ^γ)` allowed
/// per step. The slaved velocity makes density perturbations decay at that
/// rate, so the step must resolve it even when the transport speed is small.
pub const RELAXATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct LimitState {
    pub rho: ScalarField,
    pub t: f64,
}

impl LimitState {
    pub fn new(rho: ScalarField) -> Self {
        Self { rho, t: 0.0 }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.rho.grid()
    }
}

/// Spectra of the pressure and of the slaved velocity.
struct Slaved {
    pressure: Vec<f64>,
    vel_hat: Vec<Vec<Complex64>>,
}

fn slave(grid: &TorusGrid, params: &FluidParams, rho: &[f64]) -> Result<Slaved, SolverError> {
    let rho = ScalarField::new(grid, rho.to_vec())?;
    let p = model::pressure(&rho, params.gamma)?;
    let p_hat = p.spectrum();
    let grad: Vec<Vec<Complex64>> = (0..grid.dim())
        .map(|a| grid.spectral_derivative(&p_hat, a))
        .collect();
    let vel_hat = field::lame_solve_spectral(grid, &grad, params.nu, params.lambda);
    Ok(Slaved {
        pressure: p.into_values(),
        vel_hat,
    })
}

/// Mean-zero velocity solving `νΔu + (ν+λ)∇div u = ∇ρ^γ`.
pub fn velocity_from_density(rho: &ScalarField, params: &FluidParams) -> Result<VectorField, SolverError> {
    field::check_viscosity(params.nu, params.lambda)?;
    let grid = rho.grid();
    let s = slave(grid, params, rho.values())?;
    Ok(VectorField::new(
        s.vel_hat
            .into_iter()
            .map(|v| ScalarField::from_spectrum(grid, v))
            .collect(),
    )?)
}

/// Relative defect of the slaving identity `∫ρ^γ div u = ν‖∇u‖² + (ν+λ)‖div u‖²`,
/// normalized by `‖ρ^γ - mean‖₂ ‖div u‖₂` (a bound for the left side).
pub fn slaving_defect(rho: &ScalarField, u: &VectorField, params: &FluidParams) -> Result<f64, SolverError> {
    let p = model::pressure(rho, params.gamma)?;
    let div = field::divergence(u);
    let lhs = field::inner(&p, &div);
    let rhs = model::dissipation_rate(u, params.nu, params.lambda);
    let scale = field::lp_norm(&p.centered(), 2.0) * field::lp_norm(&div, 2.0);
    Ok(if scale > 0.0 { (lhs - rhs).abs() / scale } else { (lhs - rhs).abs() })
}

/// Weak form of the slaving relation tested against each `ψ` in the bank:
/// `max_ψ |∫ρ^γ div ψ - ν∫∇u:∇ψ - (ν+λ)∫div u div ψ| / ‖ψ‖₂`.
pub fn weak_momentum_residual(
    rho: &ScalarField,
    u: &VectorField,
    params: &FluidParams,
    psi_bank: &[VectorField],
) -> Result<f64, SolverError> {
    let p = model::pressure(rho, params.gamma)?;
    let grad_u = field::grad_tensor(u);
    let div_u = field::divergence(u);
    let mut worst: f64 = 0.0;
    for psi in psi_bank {
        let norm = integrate(&psi.norm_squared()).sqrt();
        if norm == 0.0 {
            continue;
        }
        let div_psi = field::divergence(psi);
        let r = field::inner(&p, &div_psi)
            - params.nu * integrate(&grad_u.contract(&field::grad_tensor(psi)))
            - (params.nu + params.lambda) * field::inner(&div_u, &div_psi);
        worst = worst.max(r.abs() / norm);
    }
    Ok(worst)
}

/// Vector test fields `e_a φ` for every axis `a` and every `φ` in
/// [`field::fourier_test_bank`] with the given `kmax`.
pub fn vector_test_bank(grid: &TorusGrid, kmax: usize) -> Vec<VectorField> {
    let scalars = field::fourier_test_bank(grid, kmax);
    let mut out = Vec::with_capacity(scalars.len() * grid.dim());
    for phi in &scalars {
        for a in 0..grid.dim() {
            let comps = (0..grid.dim())
                .map(|b| if a == b { phi.clone() } else { ScalarField::zeros(grid) })
                .collect();
            out.push(VectorField::new(comps).expect("components share a grid"));
        }
    }
    out
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Half-cell shifted samples of each velocity component along its own axis:
/// entry `a` at index `i` is `u_a(x_i + h/2 e_a)`.
fn face_velocities(grid: &TorusGrid, vel_hat: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    let half = 0.5 * grid.spacing();
    vel_hat
        .iter()
        .enumerate()
        .map(|(a, v)| {
            let k = grid.derivative_wavenumbers(a);
            let shifted = v
                .iter()
                .zip(k)
                .map(|(c, &k)| c * Complex64::from_polar(1.0, k * half))
                .collect();
            grid.inverse(shifted)
        })
        .collect()
}

/// `-div_h(F)` for upwind MUSCL fluxes with the given face velocities.
fn transport(grid: &TorusGrid, rho: &[f64], faces: &[Vec<f64>]) -> Vec<f64> {
    let h = grid.spacing();
    let mut out = vec![0.0; rho.len()];
    let mut flux = vec![0.0; rho.len()];
    for (axis, uf) in faces.iter().enumerate() {
        let slope: Vec<f64> = (0..rho.len())
            .map(|i| {
                let l = rho[grid.neighbor(i, axis, -1)];
                let r = rho[grid.neighbor(i, axis, 1)];
                minmod(rho[i] - l, r - rho[i])
            })
            .collect();
        for i in 0..rho.len() {
            let j = grid.neighbor(i, axis, 1);
            let v = uf[i];
            let upwind = if v >= 0.0 {
                rho[i] + 0.5 * slope[i]
            } else {
                rho[j] - 0.5 * slope[j]
            };
            flux[i] = v * upwind;
        }
        for i in 0..rho.len() {
            let l = grid.neighbor(i, axis, -1);
            out[i] -= (flux[i] - flux[l]) / h;
        }
    }
    out
}

/// Largest `Σ_a |u_a|` over cell centres and faces.
fn max_speed(grid: &TorusGrid, vel_hat: &[Vec<Complex64>]) -> f64 {
    let cells: Vec<Vec<f64>> = vel_hat.iter().map(|v| grid.inverse(v.clone())).collect();
    let faces = face_velocities(grid, vel_hat);
    let mut best: f64 = 0.0;
    for i in 0..grid.len() {
        let c: f64 = cells.iter().map(|u| u[i].abs()).sum();
        let f: f64 = faces.iter().map(|u| u[i].abs()).sum();
        best = best.max(c).max(f);
    }
    best
}

/// State derivative `(dρ, dD)` plus the slaving-identity defect of this evaluation.
fn rhs_flat(grid: &TorusGrid, params: &FluidParams, y: &[f64]) -> Result<(Vec<f64>, f64), SolverError> {
    let len = grid.len();
    let rho = &y[..len];
    let s = slave(grid, params, rho)?;
    let faces = face_velocities(grid, &s.vel_hat);
    let mut out = transport(grid, rho, &faces);
    let diss = spectral_dissipation(grid, &s.vel_hat, params.nu, params.lambda);

    // Audit: ∫ p div u by lattice quadrature against the Parseval dissipation.
    let mut div_hat = vec![Complex64::new(0.0, 0.0); len];
    for (a, v) in s.vel_hat.iter().enumerate() {
        for (o, d) in div_hat.iter_mut().zip(grid.spectral_derivative(v, a)) {
            *o += d;
        }
    }
    let div = grid.inverse(div_hat);
    let dv = grid.cell_volume();
    let lhs = dv * s.pressure.iter().zip(&div).map(|(p, d)| p * d).sum::<f64>();
    let p_mean = s.pressure.iter().sum::<f64>() / len as f64;
    let p_norm = (dv * s.pressure.iter().map(|p| (p - p_mean).powi(2)).sum::<f64>()).sqrt();
    let d_norm = (dv * div.iter().map(|d| d * d).sum::<f64>()).sqrt();
    let scale = p_norm * d_norm;
    let defect = if scale > 0.0 { (lhs - diss).abs() / scale } else { (lhs - diss).abs() };

    out.push(diss);
    Ok((out, defect))
}

/// Step bound: the transport CFL `cfl·h/(max Σ|u_a| + δ)` and a fraction
/// [`RELAXATION_FRACTION`] of the pressure relaxation time `(2ν+λ)/(γ max ρ^γ)`,
/// capped by `dt_max`.
pub fn stable_dt_limit(state: &LimitState, params: &FluidParams, control: &StepControl) -> Result<f64, SolverError> {
    let grid = state.grid();
    let s = slave(grid, params, state.rho.values())?;
    let speed = max_speed(grid, &s.vel_hat);
    let p_max = s.pressure.iter().fold(0.0f64, |m, &p| m.max(p));
    let advective = grid.spacing() / (speed + SPEED_SAFETY);
    let relaxation = RELAXATION_FRACTION * params.longitudinal() / (params.gamma * p_max + SPEED_SAFETY);
    Ok((control.cfl * advective).min(relaxation).min(control.dt_max))
}

fn advance(
    state: &LimitState,
    params: &FluidParams,
    dt: f64,
    rho_scale: f64,
) -> Result<(LimitState, f64, f64), SolverError> {
    let grid = state.grid();
    let mut y = state.rho.values().to_vec();
    y.push(0.0);
    let mut defect: f64 = 0.0;
    let next = ssp_rk3(&y, dt, |v| {
        let (d, e) = rhs_flat(grid, params, v)?;
        defect = defect.max(e);
        Ok::<_, SolverError>(d)
    })?;
    let len = grid.len();
    let t = state.t + dt;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::BlowUp {
            time: t,
            what: "non-finite density".into(),
        });
    }
    if next[..len].iter().any(|v| v.abs() > BLOW_UP_FACTOR * rho_scale) {
        return Err(SolverError::BlowUp {
            time: t,
            what: "density norm".into(),
        });
    }
    let rho = ScalarField::new(grid, next[..len].to_vec())?;
    Ok((LimitState { rho, t }, next[len], defect))
}

/// One SSP-RK3 step of the limit system.
pub fn step_limit(state: &LimitState, params: &FluidParams, dt: f64) -> Result<LimitState, SolverError> {
    field::check_viscosity(params.nu, params.lambda)?;
    advance(state, params, dt, state.rho.sup_norm()).map(|(s, _, _)| s)
}

fn snapshot(state: &LimitState, params: &FluidParams) -> Result<Snapshot, SolverError> {
    Ok(Snapshot {
        t: state.t,
        rho: state.rho.clone(),
        velocity: velocity_from_density(&state.rho, params)?,
        momentum: None,
    })
}

/// Integrate the limit system, recording budgets (kinetic part identically
/// zero) and the energy-equality residual `q(t) = E_int(t) + D_cum(t) - E_int(0)`.
pub fn run_limit(init: &LimitState, params: &FluidParams, control: &StepControl) -> Result<RunRecord, SolverError> {
    let grid = init.grid();
    params.validate(grid.dim())?;
    control.validate().map_err(SolverError::Control)?;
    let internal0 = model::internal_energy(&init.rho, params.gamma)?;
    let mass0 = integrate(&init.rho);
    let rho_scale = init.rho.sup_norm();
    let u0 = velocity_from_density(&init.rho, params)?;
    let budget = |state: &LimitState, d: f64| -> Result<EnergyBudget, SolverError> {
        Ok(EnergyBudget {
            time: state.t,
            kinetic_scaled: 0.0,
            internal: model::internal_energy(&state.rho, params.gamma)?,
            dissipation_cum: d,
        })
    };
    let mut record = RunRecord {
        kind: RunKind::Limit,
        grid: grid.spec(),
        params: *params,
        control: control.clone(),
        budgets: vec![budget(init, 0.0)?],
        residuals: vec![0.0],
        snapshots: vec![Snapshot {
            t: init.t,
            rho: init.rho.clone(),
            velocity: u0.clone(),
            momentum: None,
        }],
        trajectory: Vec::new(),
        audit: RunAudit {
            min_density: init.rho.min(),
            slaving_defect: slaving_defect(&init.rho, &u0, params)?,
            ..RunAudit::default()
        },
    };
    if control.record_steps {
        record.trajectory.push(record.snapshots[0].clone());
    }

    let mut state = init.clone();
    let mut dissipation = 0.0;
    for target in control.output_times() {
        while state.t < target {
            let dt = stable_dt_limit(&state, params, control)?;
            let (dt, hit) = clip_to_target(state.t, dt, target);
            let (mut next, dd, defect) = advance(&state, params, dt, rho_scale)?;
            if hit {
                next.t = target;
            }
            dissipation += dd;
            state = next;
            let a = &mut record.audit;
            a.steps += 1;
            a.slaving_defect = a.slaving_defect.max(defect);
            a.mass_drift = a.mass_drift.max((integrate(&state.rho) - mass0).abs() / mass0);
            a.min_density = a.min_density.min(state.rho.min());
            if control.record_steps {
                record.trajectory.push(snapshot(&state, params)?);
            }
        }
        let b = budget(&state, dissipation)?;
        record.residuals.push(b.internal + b.dissipation_cum - internal0);
        record.budgets.push(b);
        record.snapshots.push(snapshot(&state, params)?);
    }
    Ok(record)
}
