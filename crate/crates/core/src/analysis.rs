//! Numerical checks of the operator lemmas: the torus Bogovskii operator, the
//! pressure identity, Friedrichs commutators, renormalized continuity
//! residuals and time-integrated higher integrability.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::field::{
    self, divergence, grad_tensor, integrate, FieldError, Mollify, MollifierIndex, ScalarField,
    TorusGrid, VectorField,
};
use crate::model::{self, FluidParams, ModelError};
use crate::record::{RunRecord, Snapshot};

/// Fewest trajectory instants accepted by [`renormalization_residual`].
pub const MIN_INSTANTS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("trajectory has {found} instants, at least {required} are needed")]
    InsufficientCheckpoints { found: usize, required: usize },
    #[error("renormalizer needs cutoff > 0 and exponent >= 1, got M = {cutoff}, exponent = {exponent}")]
    BadRenormalizer { cutoff: f64, exponent: f64 },
    #[error("integrability exponent must be finite and >= 0, got {0}")]
    BadTheta(f64),
    #[error("time window [{0}, {1}] is empty")]
    BadWindow(f64, f64),
    #[error("runs disagree on {0}")]
    Mismatch(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// `B[f] = ∇Δ⁻¹(f - mean f)`. Modes invisible to the discrete divergence
/// (a Nyquist index on some axis with no other content) are dropped.
pub fn bogovskii(f: &ScalarField) -> VectorField {
    let grid = f.grid();
    let spec = f.spectrum();
    let kd: Vec<&[f64]> = (0..grid.dim()).map(|a| grid.derivative_wavenumbers(a)).collect();
    let comps = (0..grid.dim())
        .map(|a| {
            let out: Vec<Complex64> = spec
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let kd2: f64 = kd.iter().map(|k| k[i] * k[i]).sum();
                    if kd2 == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        c * Complex64::new(0.0, -kd[a][i] / kd2)
                    }
                })
                .collect();
            ScalarField::from_spectrum(grid, out)
        })
        .collect();
    VectorField::new(comps).expect("components share a grid")
}

/// The four terms of the mollified pressure identity and its relative defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureIdentity {
    pub lhs: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// `|lhs - I1 - I2 - I3| / lhs`.
    pub residual: f64,
}

/// Tests the slaving relation against `ψ = B[S_m p - mean]` with `p = ρ^γ`:
///
/// ```text
/// ∫|S_m p|² = vol·mean(p)² + ν∫∇S_m u : ∇B[g] + (ν+λ)∫div S_m u · g,   g = S_m p - mean
/// ```
pub fn pressure_identity_check(
    rho: &ScalarField,
    u: &VectorField,
    params: &FluidParams,
    m: MollifierIndex,
) -> Result<PressureIdentity, AnalysisError> {
    let grid = rho.grid();
    let sp = model::pressure(rho, params.gamma)?.mollify(m);
    let su = u.mollify(m);
    let mean = field::mean(&sp);
    let g = sp.centered();
    let lhs = field::inner(&sp, &sp);
    let i1 = grid.volume() * mean * mean;
    let i2 = params.nu * integrate(&grad_tensor(&su).contract(&grad_tensor(&bogovskii(&g))));
    let i3 = (params.nu + params.lambda) * field::inner(&divergence(&su), &g);
    let defect = (lhs - i1 - i2 - i3).abs();
    Ok(PressureIdentity {
        lhs,
        i1,
        i2,
        i3,
        residual: if lhs > 0.0 { defect / lhs } else { defect },
    })
}

/// L¹ norms of the commutator pieces
/// `A_m = S_m f (div S_m u - div u)` and `B_m = S_m f div u - S_m(f div u)`,
/// and of their sum `S_m f div S_m u - S_m(f div u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Commutator {
    pub m: f64,
    pub a_part: f64,
    pub b_part: f64,
    pub total: f64,
}

pub fn friedrichs_commutator(f: &ScalarField, u: &VectorField, m: MollifierIndex) -> Commutator {
    let sf = f.mollify(m);
    let div = divergence(u);
    let sdiv = divergence(&u.mollify(m));
    let s_prod = f.zip_map(&div, |a, b| a * b).mollify(m);
    let a = sf.zip_map(&sdiv.zip_map(&div, |x, y| x - y), |s, d| s * d);
    let b = sf.zip_map(&div, |s, d| s * d).zip_map(&s_prod, |x, y| x - y);
    let total = a.zip_map(&b, |x, y| x + y);
    Commutator {
        m: m.value(),
        a_part: field::lp_norm(&a, 1.0),
        b_part: field::lp_norm(&b, 1.0),
        total: field::lp_norm(&total, 1.0),
    }
}

/// Commutators along a ladder of mollifier indices.
pub fn commutator_ladder(f: &ScalarField, u: &VectorField, ms: &[f64]) -> Result<Vec<Commutator>, AnalysisError> {
    ms.iter()
        .map(|&m| Ok(friedrichs_commutator(f, u, MollifierIndex::new(m)?)))
        .collect()
}

/// `b(z) = z^exponent` up to `M - δ`, then a C¹ blend whose slope falls to
/// zero at the cutoff `M`; constant beyond. `δ = M/10`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenormalizerB {
    pub cutoff: f64,
    pub exponent: f64,
}

impl RenormalizerB {
    pub fn new(cutoff: f64, exponent: f64) -> Result<Self, AnalysisError> {
        if cutoff > 0.0 && cutoff.is_finite() && exponent >= 1.0 && exponent.is_finite() {
            Ok(Self { cutoff, exponent })
        } else {
            Err(AnalysisError::BadRenormalizer { cutoff, exponent })
        }
    }

    pub fn width(&self) -> f64 {
        0.1 * self.cutoff
    }

    fn knot(&self) -> f64 {
        self.cutoff - self.width()
    }

    /// On `[a, M]` with `s = (z-a)/δ`: `b' = b'(a)(1 - 3s² + 2s³)`.
    pub fn value(&self, z: f64) -> f64 {
        let z = z.max(0.0);
        let a = self.knot();
        if z <= a {
            return z.powf(self.exponent);
        }
        let d = self.width();
        let s = ((z - a) / d).min(1.0);
        let slope = self.exponent * a.powf(self.exponent - 1.0);
        a.powf(self.exponent) + slope * d * (s - s.powi(3) + 0.5 * s.powi(4))
    }

    pub fn derivative(&self, z: f64) -> f64 {
        let z = z.max(0.0);
        let a = self.knot();
        if z <= a {
            return self.exponent * z.powf(self.exponent - 1.0);
        }
        let s = ((z - self.knot()) / self.width()).min(1.0);
        self.exponent * a.powf(self.exponent - 1.0) * (1.0 - 3.0 * s * s + 2.0 * s.powi(3))
    }
}

/// Quintic smoothstep bump supported on `[start, end]`, peaking at the midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

fn smoothstep(x: f64) -> f64 {
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Result<Self, AnalysisError> {
        if end > start {
            Ok(Self { start, end })
        } else {
            Err(AnalysisError::BadWindow(start, end))
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let s = (t - self.start) / (self.end - self.start);
        if s <= 0.0 || s >= 1.0 {
            0.0
        } else if s <= 0.5 {
            smoothstep(2.0 * s)
        } else {
            smoothstep(2.0 - 2.0 * s)
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let len = self.end - self.start;
        let s = (t - self.start) / len;
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        let (y, sign) = if s <= 0.5 { (2.0 * s, 1.0) } else { (2.0 - 2.0 * s, -1.0) };
        sign * 60.0 / len * y * y * (1.0 - y) * (1.0 - y)
    }
}

/// Space-time test functions `χ(t) e(x)`: every window paired with every
/// spatial function.
#[derive(Debug, Clone)]
pub struct TestBank {
    pub spatial: Vec<ScalarField>,
    pub windows: Vec<TimeWindow>,
}

impl TestBank {
    /// Fourier modes with `|k|_∞ <= 2` (plus the constant) against windows on
    /// `[0, T]`, `[0, T/2]` and `[T/2, T]`.
    pub fn standard(grid: &TorusGrid, t_end: f64) -> Result<Self, AnalysisError> {
        Ok(Self {
            spatial: field::fourier_test_bank(grid, 2),
            windows: vec![
                TimeWindow::new(0.0, t_end)?,
                TimeWindow::new(0.0, 0.5 * t_end)?,
                TimeWindow::new(0.5 * t_end, t_end)?,
            ],
        })
    }

    pub fn len(&self) -> usize {
        self.spatial.len() * self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-instant spatial integrals for one test function `e`:
/// `(∫b e, ∫b u·∇e, ∫(b'ρ - b) div u e)` and their absolute-integrand scales.
fn spatial_terms(snap: &Snapshot, bvals: &[f64], pvals: &[f64], div: &ScalarField, e: &ScalarField, grad_e: &VectorField) -> [f64; 6] {
    let dv = snap.rho.grid().cell_volume();
    let mut out = [0.0; 6];
    for i in 0..bvals.len() {
        let flux: f64 = snap
            .velocity
            .components()
            .iter()
            .zip(grad_e.components())
            .map(|(u, g)| u.values()[i] * g.values()[i])
            .sum::<f64>()
            * bvals[i];
        let source = pvals[i] * div.values()[i] * e.values()[i];
        let mass = bvals[i] * e.values()[i];
        out[0] += mass;
        out[1] += flux;
        out[2] += source;
        out[3] += mass.abs();
        out[4] += flux.abs();
        out[5] += source.abs();
    }
    out.map(|x| x * dv)
}

/// Space-time weak residual of `∂t b(ρ) + div(b(ρ)u) + (b'(ρ)ρ - b(ρ)) div u = 0`
/// against every test function in the bank:
///
/// ```text
/// R(φ) = ∫∫ b ∂tφ + b u·∇φ - (b'ρ - b) div u φ
/// ```
///
/// Time integrals use a composite piecewise-cubic rule over the trajectory
/// instants. Since `∫χ' dt = 0`, the time term is evaluated as
/// `∫χ'(t) (∫b e)(t) - (∫b e)(0) dt`, so a conserved `∫b e` contributes only
/// round-off. Each `R(φ)` is divided by the space-time integral of the absolute
/// integrands; the maximum over the bank is returned.
pub fn renormalization_residual(trajectory: &[Snapshot], b: &RenormalizerB, bank: &TestBank) -> Result<f64, AnalysisError> {
    if trajectory.len() < MIN_INSTANTS {
        return Err(AnalysisError::InsufficientCheckpoints {
            found: trajectory.len(),
            required: MIN_INSTANTS,
        });
    }
    let grid = trajectory[0].rho.grid();
    let grads: Vec<VectorField> = bank.spatial.iter().map(field::gradient).collect();
    // terms[k][j] for instant k and spatial function j
    let terms: Vec<Vec<[f64; 6]>> = trajectory
        .iter()
        .map(|snap| {
            let bvals: Vec<f64> = snap.rho.values().iter().map(|&z| b.value(z)).collect();
            let pvals: Vec<f64> = snap
                .rho
                .values()
                .iter()
                .zip(&bvals)
                .map(|(&z, &bz)| b.derivative(z) * z - bz)
                .collect();
            let div = divergence(&snap.velocity);
            bank.spatial
                .iter()
                .zip(&grads)
                .map(|(e, ge)| spatial_terms(snap, &bvals, &pvals, &div, e, ge))
                .collect()
        })
        .collect();
    debug_assert!(trajectory.iter().all(|s| s.rho.grid() == grid));

    let times: Vec<f64> = trajectory.iter().map(|s| s.t).collect();
    let weights = cubic_weights(&times);
    let mut worst: f64 = 0.0;
    for w in &bank.windows {
        let chi: Vec<f64> = times.iter().map(|&t| w.value(t)).collect();
        let dchi: Vec<f64> = times.iter().map(|&t| w.derivative(t)).collect();
        for j in 0..bank.spatial.len() {
            let b0 = terms[0][j][0];
            let mut value = 0.0;
            let mut scale = 0.0;
            for (k, wk) in weights.iter().enumerate() {
                let c = &terms[k][j];
                value += wk * (dchi[k] * (c[0] - b0) + chi[k] * (c[1] - c[2]));
                scale += wk * (dchi[k].abs() * c[3] + chi[k] * (c[4] + c[5]));
            }
            if scale > 0.0 {
                worst = worst.max(value.abs() / scale);
            }
        }
    }
    Ok(worst)
}

/// Weights of the composite rule that integrates, on each interval, the cubic
/// interpolating the four nearest nodes. Needs at least four nodes.
fn cubic_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut w = vec![0.0; n];
    let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    for k in 0..n - 1 {
        let first = k.saturating_sub(1).min(n - 4);
        let nodes = &t[first..first + 4];
        let h = t[k + 1] - t[k];
        for g in gauss {
            let x = t[k] + g * h;
            for (j, &tj) in nodes.iter().enumerate() {
                let basis: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, &ti)| (x - ti) / (tj - ti))
                    .product();
                w[first + j] += 0.5 * h * basis;
            }
        }
    }
    w
}

/// The same residual for the plain continuity equation, `b(z) = z`.
pub fn continuity_residual(trajectory: &[Snapshot], bank: &TestBank) -> Result<f64, AnalysisError> {
    let max_rho = trajectory
        .iter()
        .fold(0.0f64, |m, s| m.max(s.rho.max()));
    let linear = RenormalizerB::new(2.0 * max_rho.max(1.0), 1.0)?;
    renormalization_residual(trajectory, &linear, bank)
}

/// Extra integrability exponent `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityProbe {
    pub theta: f64,
}

impl IntegrabilityProbe {
    pub fn new(theta: f64) -> Result<Self, AnalysisError> {
        if theta >= 0.0 && theta.is_finite() {
            Ok(Self { theta })
        } else {
            Err(AnalysisError::BadTheta(theta))
        }
    }

    /// `θ = 2γ/3 - 1`.
    pub fn default_for(gamma: f64) -> Result<Self, AnalysisError> {
        Self::new(2.0 * gamma / 3.0 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityRow {
    pub epsilon: f64,
    /// `∫₀^T ∫ ρ^{γ+θ} dx dt`.
    pub value: f64,
}

/// Time integral of `∫ρ^{γ+θ}` per run, by the trapezoid rule over the
/// trajectory when it was recorded and over the snapshots otherwise.
pub fn higher_integrability(records: &[&RunRecord], probe: &IntegrabilityProbe) -> Result<Vec<IntegrabilityRow>, AnalysisError> {
    if let Some(first) = records.first() {
        for r in records {
            if r.grid != first.grid {
                return Err(AnalysisError::Mismatch("grid"));
            }
            if r.params.gamma != first.params.gamma {
                return Err(AnalysisError::Mismatch("gamma"));
            }
            if r.control.t_end != first.control.t_end {
                return Err(AnalysisError::Mismatch("t_end"));
            }
        }
    }
    records
        .iter()
        .map(|r| {
            let power = r.params.gamma + probe.theta;
            let instants = if r.trajectory.is_empty() { &r.snapshots } else { &r.trajectory };
            let samples: Vec<(f64, f64)> = instants
                .iter()
                .map(|s| {
                    let rho = model::clamp_density(&s.rho)?;
                    Ok((s.t, integrate(&rho.map(|z| z.powf(power)))))
                })
                .collect::<Result<_, ModelError>>()?;
            let value = samples
                .windows(2)
                .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
                .sum();
            Ok(IntegrabilityRow {
                epsilon: r.params.epsilon,
                value,
            })
        })
        .collect()
}

/// Machine-readable outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub inputs_hash: String,
    pub values: serde_json::Value,
    pub pass: bool,
    pub tolerance: f64,
}

/// SHA-256 over the grid shape and the little-endian bytes of each field.
pub fn fields_hash(fields: &[&ScalarField]) -> String {
    let mut h = Sha256::new();
    for f in fields {
        let g = f.grid();
        h.update((g.dim() as u64).to_le_bytes());
        h.update((g.n() as u64).to_le_bytes());
        for v in f.values() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
