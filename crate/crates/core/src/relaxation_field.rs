//! The log-relaxation-time axis u = ln τ, the Matérn random field δg(u) that
//! perturbs the relaxation spectrum, its seeded sampling and its
//! Karhunen–Loève decomposition under the grid quadrature.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::symmetric_eigen;
use crate::{Error, Result};

/// Eigenvalues in `[-PSD_CLAMP * λ_max, 0)` are treated as rounding and
/// clamped to zero; anything more negative is rejected.
pub const PSD_CLAMP: f64 = 1e-12;

/// Discretized u-axis with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTauGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl LogTauGrid {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::config("grid.points", "at least two grid points are required"));
        }
        if points.len() != weights.len() {
            return Err(Error::GridMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("grid.points", "points must be finite and strictly increasing"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::config("grid.weights", "weights must be positive"));
        }
        Ok(Self { points, weights })
    }

    /// Uniform grid on `[lo, hi]` with trapezoid weights.
    pub fn trapezoid(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::config("grid", "need n >= 2 and hi > lo"));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let points = (0..n).map(|i| lo + step * i as f64).collect();
        let mut weights = vec![step; n];
        weights[0] = step / 2.0;
        weights[n - 1] = step / 2.0;
        Self::new(points, weights)
    }

    /// Trapezoid grid over `[ln tau_min, ln tau_max]` (relaxation times in seconds).
    pub fn from_tau_range(tau_min: f64, tau_max: f64, n: usize) -> Result<Self> {
        if !(tau_min > 0.0 && tau_max > tau_min) {
            return Err(Error::config("field.tau_min", "need 0 < tau_min < tau_max"));
        }
        Self::trapezoid(tau_min.ln(), tau_max.ln(), n)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn span(&self) -> f64 {
        self.points[self.len() - 1] - self.points[0]
    }

    pub(crate) fn check_len(&self, found: usize) -> Result<()> {
        if found != self.len() {
            return Err(Error::GridMismatch {
                expected: self.len(),
                found,
            });
        }
        Ok(())
    }
}

/// Closed-form Matérn smoothness orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl Smoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        match nu {
            0.5 => Ok(Self::Half),
            1.5 => Ok(Self::ThreeHalves),
            2.5 => Ok(Self::FiveHalves),
            other => Err(Error::UnsupportedSmoothness(other)),
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
            Self::FiveHalves => 2.5,
        }
    }

    /// Unit-variance correlation at scaled lag `d = |h| / ℓ`.
    fn correlation(self, d: f64) -> f64 {
        match self {
            Self::Half => (-d).exp(),
            Self::ThreeHalves => {
                let s = 3f64.sqrt() * d;
                (1.0 + s) * (-s).exp()
            }
            Self::FiveHalves => {
                let s = 5f64.sqrt() * d;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }
}

/// Amplitude σ_g, smoothness ν and correlation scale ℓ of the stationary
/// Matérn kernel K(u, u') = σ_g² κ_{ν,ℓ}(u − u').
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma_g: f64,
    pub nu: f64,
    pub ell: f64,
}

impl MaternParams {
    pub fn new(sigma_g: f64, nu: f64, ell: f64) -> Result<Self> {
        let params = Self { sigma_g, nu, ell };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<Smoothness> {
        if !(self.sigma_g >= 0.0) || !self.sigma_g.is_finite() {
            return Err(Error::config(
                "field.sigma_g",
                format!("MaternParams invariant violated: sigma_g must be >= 0 (got {})", self.sigma_g),
            ));
        }
        if !(self.ell > 0.0) || !self.ell.is_finite() {
            return Err(Error::config(
                "field.ell",
                format!("MaternParams invariant violated: ell must be > 0 (got {})", self.ell),
            ));
        }
        Smoothness::from_nu(self.nu)
    }
}

/// σ_g² κ_{ν,ℓ}(|h|) for the supported closed forms.
pub fn matern_kernel(h: f64, params: &MaternParams) -> Result<f64> {
    let smoothness = params.validate()?;
    let variance = params.sigma_g * params.sigma_g;
    if h == 0.0 {
        return Ok(variance);
    }
    Ok(variance * smoothness.correlation(h.abs() / params.ell))
}

/// Kernel K(u_i, u_j) evaluated on a grid.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    grid: LogTauGrid,
}

impl KernelMatrix {
    pub fn from_entries(entries: DMatrix<f64>, grid: LogTauGrid) -> Result<Self> {
        grid.check_len(entries.nrows())?;
        grid.check_len(entries.ncols())?;
        Ok(Self { entries, grid })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn grid(&self) -> &LogTauGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Fill `entries[i][j] = matern_kernel(u_i − u_j)`. Only the upper triangle
/// is evaluated, so the result is exactly symmetric.
pub fn build_kernel_matrix(grid: &LogTauGrid, params: &MaternParams) -> Result<KernelMatrix> {
    let smoothness = params.validate()?;
    let n = grid.len();
    let u = grid.points();
    let variance = params.sigma_g * params.sigma_g;
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        entries[(i, i)] = variance;
        for j in (i + 1)..n {
            let v = variance * smoothness.correlation((u[i] - u[j]).abs() / params.ell);
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    KernelMatrix::from_entries(entries, grid.clone())
}

/// Apply the jitter policy to a descending eigenvalue list.
fn clamp_spectrum(values: &mut [f64]) -> Result<()> {
    let max = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_CLAMP * max || max == 0.0 {
                return Err(Error::NotPositiveSemidefinite { eigenvalue: *v, max });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// One sample of δg on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    pub values: DVector<f64>,
    pub stream: RealizationStream,
}

/// Identity of the generator that produced a realization: the experiment
/// seed plus the realization index, used as a ChaCha20 stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizationStream {
    pub seed: u64,
    pub index: u64,
}

impl RealizationStream {
    pub fn rng(self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// Symmetric square-root factor of a kernel matrix, F = V Λ^{1/2}, so that
/// F z with z ~ N(0, I) has covariance K.
#[derive(Debug, Clone)]
pub struct FieldSampler {
    factor: DMatrix<f64>,
}

impl FieldSampler {
    pub fn new(kernel: &KernelMatrix) -> Result<Self> {
        let (mut values, vectors) = symmetric_eigen(kernel.entries());
        // an all-zero kernel (σ_g = 0) is valid and yields zero draws
        if values.iter().all(|v| *v == 0.0) {
            return Ok(Self {
                factor: DMatrix::zeros(kernel.len(), kernel.len()),
            });
        }
        clamp_spectrum(&mut values)?;
        let mut factor = vectors;
        for (mut col, lambda) in factor.column_iter_mut().zip(values.iter()) {
            col *= lambda.sqrt();
        }
        Ok(Self { factor })
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.nrows() == 0
    }

    pub fn sample(&self, stream: RealizationStream) -> FieldRealization {
        let mut rng = stream.rng();
        let z = DVector::from_iterator(self.len(), (0..self.len()).map(|_| StandardNormal.sample(&mut rng)));
        FieldRealization {
            values: &self.factor * z,
            stream,
        }
    }
}

/// `count` i.i.d. realizations, realization `i` drawn from stream `(seed, i)`.
/// The result does not depend on thread count.
pub fn sample_field(kernel: &KernelMatrix, seed: u64, count: usize) -> Result<Vec<FieldRealization>> {
    if count == 0 {
        return Err(Error::InsufficientSamples { required: 1, found: 0 });
    }
    let sampler = FieldSampler::new(kernel)?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|index| sampler.sample(RealizationStream { seed, index }))
        .collect())
}

/// Karhunen–Loève modes of the integral operator with kernel K under the
/// grid quadrature. Eigenfunctions are orthonormal in the weighted inner
/// product Σ_u w_u φ_q(u) φ_p(u).
#[derive(Debug, Clone)]
pub struct KLBasis {
    eigenvalues: Vec<f64>,
    eigenfunctions: DMatrix<f64>,
    grid: LogTauGrid,
}

impl KLBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Column q holds φ_q sampled on the grid.
    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn grid(&self) -> &LogTauGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Σ_{q<order} λ_q φ_q(u) φ_q(u').
    pub fn reconstruct(&self, order: usize) -> DMatrix<f64> {
        let n = self.grid.len();
        let mut out = DMatrix::zeros(n, n);
        for q in 0..order.min(self.len()) {
            let phi = self.eigenfunctions.column(q);
            out += phi * phi.transpose() * self.eigenvalues[q];
        }
        out
    }
}

/// Solve W^{1/2} K W^{1/2} ψ = λ ψ and map back with φ = W^{-1/2} ψ.
pub fn kl_decompose(kernel: &KernelMatrix) -> Result<KLBasis> {
    let grid = kernel.grid().clone();
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let n = grid.len();
    let weighted = DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * kernel.entries()[(i, j)] * sqrt_w[j]);
    let (mut values, vectors) = symmetric_eigen(&weighted);
    if !values.iter().all(|v| *v == 0.0) {
        clamp_spectrum(&mut values)?;
    }
    let eigenfunctions = DMatrix::from_fn(n, n, |i, q| vectors[(i, q)] / sqrt_w[i]);
    Ok(KLBasis {
        eigenvalues: values,
        eigenfunctions,
        grid,
    })
}
