//! Periodic lattice fields on the torus `[0, 2π)^d` and their spectral calculus.
//!
//! A [`TorusGrid`] owns the FFT plans for its axis length. Plans are immutable
//! and `Sync`; every transform allocates its own working buffers, so a grid (and
//! any field referring to it) may be shared freely between threads.
//!
//! Spectra are unnormalized forward DFTs (`f̂(k) = Σ_x f(x) e^{-ik·x}`); the
//! inverse divides by the point count. First-derivative multipliers vanish on
//! the Nyquist index of each axis so that derivatives of real fields stay real.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("points per axis must be an even power of two >= 8, got {0}")]
    BadResolution(usize),
    #[error("component {component} has non-zero mean {mean:e}")]
    NonZeroMean { component: usize, mean: f64 },
    #[error("invalid viscosity: nu = {nu}, lambda = {lambda} (need nu > 0 and nu + lambda >= 0)")]
    InvalidViscosity { nu: f64, lambda: f64 },
    #[error("mollifier cutoff must be positive and finite, got {0}")]
    BadMollifier(f64),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids")]
    GridMismatch,
}

struct GridInner {
    dim: usize,
    n: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Integer wavenumber per axis, per flat index (Nyquist kept).
    wave: Vec<Vec<f64>>,
    /// Same as `wave` but zero on each axis' Nyquist index.
    deriv: Vec<Vec<f64>>,
    ksq: Vec<f64>,
    dealias: Vec<bool>,
}

/// Uniform periodic lattice with `n` points per axis and period 2π.
#[derive(Clone)]
pub struct TorusGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.dim())
            .field("n", &self.n())
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim() == other.dim() && self.n() == other.n()
    }
}

/// Serializable description of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
}

/// Signed integer wavenumber of index `i` on an axis of length `n`.
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self, FieldError> {
        if !(2..=3).contains(&dim) {
            return Err(FieldError::BadDimension(dim));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(FieldError::BadResolution(n));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = n.pow(dim as u32);
        let cut = (n / 3) as i64;
        let mut wave = vec![vec![0.0; len]; dim];
        let mut deriv = vec![vec![0.0; len]; dim];
        let mut ksq = vec![0.0; len];
        let mut dealias = vec![true; len];
        for idx in 0..len {
            let mut rem = idx;
            for axis in (0..dim).rev() {
                let i = rem % n;
                rem /= n;
                let k = wavenumber(i, n);
                wave[axis][idx] = k as f64;
                deriv[axis][idx] = if i == n / 2 { 0.0 } else { k as f64 };
                ksq[idx] += (k * k) as f64;
                if k.abs() > cut {
                    dealias[idx] = false;
                }
            }
        }
        Ok(Self {
            inner: Arc::new(GridInner {
                dim,
                n,
                len,
                fwd,
                inv,
                wave,
                deriv,
                ksq,
                dealias,
            }),
        })
    }

    pub fn from_spec(spec: GridSpec) -> Result<Self, FieldError> {
        Self::new(spec.dim, spec.n)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim(),
            n: self.n(),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    /// Number of lattice points, `n^dim`.
    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        TWO_PI / self.n() as f64
    }

    pub fn volume(&self) -> f64 {
        TWO_PI.powi(self.dim() as i32)
    }

    /// Quadrature weight of one lattice point, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim() as i32)
    }

    /// Integer wavenumbers along `axis` for every flat index.
    pub fn wavenumbers(&self, axis: usize) -> &[f64] {
        &self.inner.wave[axis]
    }

    /// Wavenumbers used by first derivatives (Nyquist index zeroed).
    pub fn derivative_wavenumbers(&self, axis: usize) -> &[f64] {
        &self.inner.deriv[axis]
    }

    pub fn k_squared(&self) -> &[f64] {
        &self.inner.ksq
    }

    /// True where the mode survives 2/3-rule truncation.
    pub fn dealias_mask(&self) -> &[bool] {
        &self.inner.dealias
    }

    /// Lattice index tuple of a flat index (axis 0 slowest).
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let n = self.n();
        let mut out = [0usize; 3];
        for axis in (0..self.dim()).rev() {
            out[axis] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn flatten(&self, ix: [usize; 3]) -> usize {
        let n = self.n();
        (0..self.dim()).fold(0, |acc, a| acc * n + ix[a] % n)
    }

    /// Coordinates of a lattice point.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let ix = self.unflatten(idx);
        let h = self.spacing();
        [ix[0] as f64 * h, ix[1] as f64 * h, ix[2] as f64 * h]
    }

    /// Stride of `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.n().pow((self.dim() - 1 - axis) as u32)
    }

    /// Flat index of the neighbour `offset` cells away along `axis`.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let n = self.n() as isize;
        let stride = self.stride(axis);
        let i = ((idx / stride) % self.n()) as isize;
        let j = (i + offset).rem_euclid(n);
        (idx as isize + (j - i) * stride as isize) as usize
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n();
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
        for axis in 0..self.dim() {
            let stride = self.stride(axis);
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            // View as [outer][n][stride]; move the axis innermost, transform, move back.
            let block = n * stride;
            for (src, dst) in data.chunks_exact(block).zip(buf.chunks_exact_mut(block)) {
                transpose(src, dst, n, stride);
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for (src, dst) in buf.chunks_exact(block).zip(data.chunks_exact_mut(block)) {
                transpose(src, dst, stride, n);
            }
        }
    }

    /// Unnormalized forward DFT of real samples.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.len());
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.inner.fwd);
        data
    }

    /// Inverse DFT (normalized), returning the real part.
    pub fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spectrum, &self.inner.inv);
        let scale = 1.0 / self.len() as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    /// Spectrum of the derivative along `axis`.
    pub fn spectral_derivative(&self, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
        let k = self.derivative_wavenumbers(axis);
        spec.iter()
            .zip(k)
            .map(|(c, &k)| Complex64::new(-k * c.im, k * c.re))
            .collect()
    }

    /// Zero every mode outside the 2/3-rule band.
    pub fn truncate(&self, spec: &mut [Complex64]) {
        for (c, &keep) in spec.iter_mut().zip(self.dealias_mask()) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Samples `f(x)` on the lattice.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> ScalarField {
        let values = (0..self.len()).map(|i| f(self.coords(i))).collect();
        ScalarField {
            grid: self.clone(),
            values,
        }
    }
}

/// Row-major `rows × cols` to `cols × rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Real samples of a scalar quantity on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn constant(grid: &TorusGrid, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid == other.grid);
        Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    pub fn from_spectrum(grid: &TorusGrid, spec: Vec<Complex64>) -> Self {
        Self {
            grid: grid.clone(),
            values: grid.inverse(spec),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Cyclic lattice translation by `shift` cells per axis.
    pub fn translated(&self, shift: [usize; 3]) -> Self {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for (idx, &v) in self.values.iter().enumerate() {
            let ix = g.unflatten(idx);
            let moved = [ix[0] + shift[0], ix[1] + shift[1], ix[2] + shift[2]];
            out[g.flatten(moved)] = v;
        }
        Self {
            grid: g.clone(),
            values: out,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// The field minus its mean.
    pub fn centered(&self) -> Self {
        let m = mean(self);
        self.map(|v| v - m)
    }
}

/// `dim` real components on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self, FieldError> {
        let first = components.first().ok_or(FieldError::BadDimension(0))?;
        if components.len() != first.grid().dim() {
            return Err(FieldError::BadDimension(components.len()));
        }
        if components.iter().any(|c| c.grid() != first.grid()) {
            return Err(FieldError::GridMismatch);
        }
        Ok(Self { components })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn constant(grid: &TorusGrid, c: &[f64]) -> Self {
        Self {
            components: (0..grid.dim())
                .map(|a| ScalarField::constant(grid, c.get(a).copied().unwrap_or(0.0)))
                .collect(),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.components[0].grid()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn components_mut(&mut self) -> &mut [ScalarField] {
        &mut self.components
    }

    pub fn map(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self {
            components: self.components.iter().map(f).collect(),
        }
    }

    /// Pointwise squared Euclidean norm.
    pub fn norm_squared(&self) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid());
        for c in &self.components {
            for (o, v) in out.values.iter_mut().zip(&c.values) {
                *o += v * v;
            }
        }
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.norm_squared().sup_norm().sqrt()
    }

    pub fn translated(&self, shift: [usize; 3]) -> Self {
        self.map(|c| c.translated(shift))
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|f| f.scaled(c))
    }

    /// Pointwise product with a scalar field.
    pub fn times(&self, s: &ScalarField) -> Self {
        self.map(|c| c.zip_map(s, |a, b| a * b))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.zip_map(b, |x, y| x + y))
                .collect(),
        }
    }
}

/// Cutoff scale `m > 0` of the Gaussian mollifier `exp(-|k|²/(2m²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierIndex(f64);

impl MollifierIndex {
    pub fn new(m: f64) -> Result<Self, FieldError> {
        if m > 0.0 && m.is_finite() {
            Ok(Self(m))
        } else {
            Err(FieldError::BadMollifier(m))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn multiplier(self, ksq: f64) -> f64 {
        (-ksq / (2.0 * self.0 * self.0)).exp()
    }
}

/// Spatial derivative tensor with `entries[i][j] = ∂_i v_j`.
#[derive(Clone, Debug)]
pub struct GradTensor {
    pub entries: Vec<Vec<ScalarField>>,
}

impl GradTensor {
    /// Pointwise Frobenius square `Σ_ij (∂_i v_j)²`.
    pub fn frobenius_squared(&self) -> ScalarField {
        let grid = self.entries[0][0].grid().clone();
        let mut out = vec![0.0; grid.len()];
        for row in &self.entries {
            for e in row {
                for (o, v) in out.iter_mut().zip(e.values()) {
                    *o += v * v;
                }
            }
        }
        ScalarField { grid, values: out }
    }

    /// Pointwise contraction `Σ_ij A_ij B_ij`.
    pub fn contract(&self, other: &GradTensor) -> ScalarField {
        let grid = self.entries[0][0].grid().clone();
        let mut out = vec![0.0; grid.len()];
        for (ra, rb) in self.entries.iter().zip(&other.entries) {
            for (a, b) in ra.iter().zip(rb) {
                for ((o, x), y) in out.iter_mut().zip(a.values()).zip(b.values()) {
                    *o += x * y;
                }
            }
        }
        ScalarField { grid, values: out }
    }
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid();
    let spec = f.spectrum();
    VectorField {
        components: (0..grid.dim())
            .map(|a| ScalarField::from_spectrum(grid, grid.spectral_derivative(&spec, a)))
            .collect(),
    }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (a, c) in v.components().iter().enumerate() {
        let d = grid.spectral_derivative(&c.spectrum(), a);
        for (o, x) in acc.iter_mut().zip(d) {
            *o += x;
        }
    }
    ScalarField::from_spectrum(grid, acc)
}

pub fn grad_tensor(v: &VectorField) -> GradTensor {
    let grid = v.grid();
    let spectra: Vec<_> = v.components().iter().map(|c| c.spectrum()).collect();
    let entries = (0..grid.dim())
        .map(|i| {
            spectra
                .iter()
                .map(|s| ScalarField::from_spectrum(grid, grid.spectral_derivative(s, i)))
                .collect()
        })
        .collect();
    GradTensor { entries }
}

/// Spectral Laplacian, multiplier `-|k|²`.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let spec = f
        .spectrum()
        .into_iter()
        .zip(grid.k_squared())
        .map(|(c, &k2)| -c * k2)
        .collect();
    ScalarField::from_spectrum(grid, spec)
}

pub fn check_viscosity(nu: f64, lambda: f64) -> Result<(), FieldError> {
    if nu > 0.0 && nu + lambda >= 0.0 && nu.is_finite() && lambda.is_finite() {
        Ok(())
    } else {
        Err(FieldError::InvalidViscosity { nu, lambda })
    }
}

/// Forward Lamé operator `νΔu + (ν+λ)∇(div u)`, with `Δ = div ∘ ∇` so that the
/// operator is the exact negative of the lattice dissipation form.
pub fn lame_apply(u: &VectorField, nu: f64, lambda: f64) -> VectorField {
    let grid = u.grid();
    let spectra: Vec<_> = u.components().iter().map(|c| c.spectrum()).collect();
    let out = lame_apply_spectral(grid, &spectra, nu, lambda);
    VectorField {
        components: out
            .into_iter()
            .map(|s| ScalarField::from_spectrum(grid, s))
            .collect(),
    }
}

pub(crate) fn lame_apply_spectral(
    grid: &TorusGrid,
    spectra: &[Vec<Complex64>],
    nu: f64,
    lambda: f64,
) -> Vec<Vec<Complex64>> {
    let dim = grid.dim();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; dim];
    for idx in 0..grid.len() {
        let mut kd = [0.0; 3];
        let mut kd2 = 0.0;
        let mut kdotu = Complex64::new(0.0, 0.0);
        for (a, s) in spectra.iter().enumerate() {
            kd[a] = grid.derivative_wavenumbers(a)[idx];
            kd2 += kd[a] * kd[a];
            kdotu += s[idx] * kd[a];
        }
        for (a, o) in out.iter_mut().enumerate() {
            o[idx] = -spectra[a][idx] * (nu * kd2) - kdotu * ((nu + lambda) * kd[a]);
        }
    }
    out
}

/// Mean-zero solution `u` of `νΔu + (ν+λ)∇(div u) = f`.
pub fn lame_solve(f: &VectorField, nu: f64, lambda: f64) -> Result<VectorField, FieldError> {
    check_viscosity(nu, lambda)?;
    for (component, c) in f.components().iter().enumerate() {
        let m = mean(c);
        if m.abs() > 1e-10 * (1.0 + c.sup_norm()) {
            return Err(FieldError::NonZeroMean { component, mean: m });
        }
    }
    let grid = f.grid();
    let spectra: Vec<_> = f.components().iter().map(|c| c.spectrum()).collect();
    Ok(VectorField {
        components: lame_solve_spectral(grid, &spectra, nu, lambda)
            .into_iter()
            .map(|s| ScalarField::from_spectrum(grid, s))
            .collect(),
    })
}

/// Mode-wise inverse: longitudinal part over `(2ν+λ)|k|²`, transverse over `ν|k|²`.
/// Modes whose derivative symbol vanishes (the mean and pure Nyquist modes)
/// are mapped to zero.
pub(crate) fn lame_solve_spectral(
    grid: &TorusGrid,
    spectra: &[Vec<Complex64>],
    nu: f64,
    lambda: f64,
) -> Vec<Vec<Complex64>> {
    let dim = grid.dim();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; dim];
    let long = 2.0 * nu + lambda;
    for idx in 0..grid.len() {
        let mut kd = [0.0; 3];
        let mut kd2 = 0.0;
        let mut kdotf = Complex64::new(0.0, 0.0);
        for a in 0..dim {
            kd[a] = grid.derivative_wavenumbers(a)[idx];
            kd2 += kd[a] * kd[a];
            kdotf += spectra[a][idx] * kd[a];
        }
        if kd2 == 0.0 {
            continue;
        }
        for a in 0..dim {
            let par = kdotf * (kd[a] / kd2);
            let perp = spectra[a][idx] - par;
            out[a][idx] = -par / (long * kd2) - perp / (nu * kd2);
        }
    }
    out
}

/// Pointwise Gaussian smoothing in Fourier space.
pub trait Mollify: Sized {
    fn mollify(&self, m: MollifierIndex) -> Self;
}

impl Mollify for ScalarField {
    fn mollify(&self, m: MollifierIndex) -> Self {
        let grid = self.grid();
        let spec = self
            .spectrum()
            .into_iter()
            .zip(grid.k_squared())
            .map(|(c, &k2)| c * m.multiplier(k2))
            .collect();
        ScalarField::from_spectrum(grid, spec)
    }
}

impl Mollify for VectorField {
    fn mollify(&self, m: MollifierIndex) -> Self {
        self.map(|c| c.mollify(m))
    }
}

pub fn mollify<F: Mollify>(f: &F, m: MollifierIndex) -> F {
    f.mollify(m)
}

/// Rectangle-rule integral over the torus.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid().cell_volume() * f.values().iter().sum::<f64>()
}

pub fn mean(f: &ScalarField) -> f64 {
    f.values().iter().sum::<f64>() / f.grid().len() as f64
}

pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    let s: f64 = f.values().iter().map(|v| v.abs().powf(p)).sum();
    (f.grid().cell_volume() * s).powf(1.0 / p)
}

/// `∫ f g dx` by the rectangle rule.
pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    f.grid().cell_volume() * f.values().iter().zip(g.values()).map(|(a, b)| a * b).sum::<f64>()
}

pub fn l1_distance(f: &ScalarField, g: &ScalarField) -> f64 {
    f.grid().cell_volume()
        * f.values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
}

/// `Σ_k |f̂(k)|²` scaled so that it equals `∫ f²` (discrete Parseval).
pub fn spectral_energy(spec: &[Complex64], grid: &TorusGrid) -> f64 {
    let n = grid.len() as f64;
    grid.volume() / (n * n) * spec.iter().map(|c| c.norm_sqr()).sum::<f64>()
}

/// Real trigonometric test functions: the constant, then `cos(k·x)` and
/// `sin(k·x)` for every `k` with `0 < |k|_∞ <= kmax`, one `k` per `±k` pair.
pub fn fourier_test_bank(grid: &TorusGrid, kmax: usize) -> Vec<ScalarField> {
    let d = grid.dim();
    let km = kmax as i64;
    let span = 2 * km + 1;
    let total = span.pow(d as u32);
    let mut out = vec![ScalarField::constant(grid, 1.0)];
    for code in 0..total {
        let mut k = [0i64; 3];
        let mut c = code;
        for slot in k.iter_mut().take(d) {
            *slot = c % span - km;
            c /= span;
        }
        // keep the lexicographically positive representative of ±k
        match k.iter().take(d).rev().find(|&&x| x != 0) {
            Some(&lead) if lead > 0 => {}
            _ => continue,
        }
        let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
        let phase = move |x: [f64; 3]| kf[0] * x[0] + kf[1] * x[1] + kf[2] * x[2];
        out.push(grid.sample(move |x| phase(x).cos()));
        out.push(grid.sample(move |x| phase(x).sin()));
    }
    out
}

/// Random real field built from Fourier modes with `|k|_∞ <= kmax`, smooth
/// amplitudes decaying like `1/(1+|k|²)`, normalized to unit sup norm.
/// Deterministic in `seed`.
pub fn random_smooth(grid: &TorusGrid, kmax: usize, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = kmax.min(grid.n() / 2 - 1) as i64;
    let dim = grid.dim();
    let mut modes = Vec::new();
    let mut ks = Vec::new();
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            if dim == 2 {
                ks.push([a, b, 0]);
            } else {
                for c in -kmax..=kmax {
                    ks.push([a, b, c]);
                }
            }
        }
    }
    for k in ks {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        let amp = 1.0 / (1.0 + k2);
        let a: f64 = rng.gen_range(-1.0..1.0);
        let phase: f64 = rng.gen_range(0.0..TWO_PI);
        modes.push((k, amp * a, phase));
    }
    let f = grid.sample(|x| {
        modes
            .iter()
            .map(|(k, a, ph)| {
                let arg = k[0] as f64 * x[0] + k[1] as f64 * x[1] + k[2] as f64 * x[2];
                a * (arg + ph).cos()
            })
            .sum()
    });
    let peak = f.sup_norm();
    if peak > 0.0 {
        f.scaled(1.0 / peak)
    } else {
        f
    }
}

/// Random smooth vector field, one [`random_smooth`] draw per component.
pub fn random_smooth_vector(grid: &TorusGrid, kmax: usize, seed: u64) -> VectorField {
    VectorField {
        components: (0..grid.dim())
            .map(|a| random_smooth(grid, kmax, seed.wrapping_mul(31).wrapping_add(a as u64 + 1)))
            .collect(),
    }
}
