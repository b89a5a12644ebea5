//! Local steering covariance R_a, the scene aggregates R0, R_med and
//! R_c = R0 + R_med, sample estimators, and a plain-text CSV format for
//! covariance matrices.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, complexify, hermitian_eigen, hermitian_residual, max_abs, symmetrize, CMatrix, CVector};
use crate::propagation::{perturb_steering_exact, perturb_steering_first_order, MediumChannels, ScenePatch, SteeringKernel};
use crate::relaxation_field::{FieldRealization, KernelMatrix};
use crate::{Error, Result};

/// Default acceptance bounds on scaled diagnostics.
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const MIN_EIGEN_TOL: f64 = -1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovLabel {
    #[serde(rename = "R_a")]
    Ra,
    R0,
    Rmed,
    Rc,
    #[serde(rename = "sample")]
    Sample,
}

impl fmt::Display for CovLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovLabel::Ra => "R_a",
            CovLabel::R0 => "R0",
            CovLabel::Rmed => "Rmed",
            CovLabel::Rc => "Rc",
            CovLabel::Sample => "sample",
        })
    }
}

impl FromStr for CovLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R_a" => Ok(CovLabel::Ra),
            "R0" => Ok(CovLabel::R0),
            "Rmed" => Ok(CovLabel::Rmed),
            "Rc" => Ok(CovLabel::Rc),
            "sample" => Ok(CovLabel::Sample),
            other => Err(Error::Format(format!("unknown covariance label `{other}`"))),
        }
    }
}

/// Hermitian M×M matrix. The constructor symmetrizes and keeps the
/// pre-symmetrization residual plus the eigenvalue range.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    entries: CMatrix,
    label: CovLabel,
    hermitian_residual: f64,
    min_eigenvalue: f64,
    max_eigenvalue: f64,
}

impl CovarianceMatrix {
    pub fn new(raw: CMatrix, label: CovLabel) -> Result<Self> {
        if raw.nrows() != raw.ncols() {
            return Err(Error::DimensionMismatch {
                left: raw.nrows(),
                right: raw.ncols(),
            });
        }
        let residual = hermitian_residual(&raw);
        let entries = symmetrize(&raw);
        let (values, _) = hermitian_eigen(&entries);
        let max_eigenvalue = values.first().copied().unwrap_or(0.0);
        let min_eigenvalue = values.last().copied().unwrap_or(0.0);
        Ok(Self {
            entries,
            label,
            hermitian_residual: residual,
            min_eigenvalue,
            max_eigenvalue,
        })
    }

    pub fn zeros(dim: usize, label: CovLabel) -> Self {
        Self {
            entries: CMatrix::zeros(dim, dim),
            label,
            hermitian_residual: 0.0,
            min_eigenvalue: 0.0,
            max_eigenvalue: 0.0,
        }
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn label(&self) -> CovLabel {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn hermitian_residual(&self) -> f64 {
        self.hermitian_residual
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eigenvalue
    }

    /// Residual relative to the largest entry magnitude.
    pub fn scaled_residual(&self) -> f64 {
        let scale = max_abs(&self.entries);
        if scale == 0.0 {
            0.0
        } else {
            self.hermitian_residual / scale
        }
    }

    /// Smallest eigenvalue relative to the largest; 0 for the zero matrix.
    pub fn scaled_min_eigenvalue(&self) -> f64 {
        if self.max_eigenvalue <= 0.0 {
            if self.min_eigenvalue == 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            self.min_eigenvalue / self.max_eigenvalue
        }
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.entries).re
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|z| z.norm() == 0.0)
    }

    /// Fail unless both scaled diagnostics are within tolerance.
    pub fn check(&self) -> Result<()> {
        if self.scaled_min_eigenvalue() < MIN_EIGEN_TOL {
            return Err(Error::NotPositiveSemidefinite {
                eigenvalue: self.min_eigenvalue,
                max: self.max_eigenvalue,
            });
        }
        Ok(())
    }

    pub fn relabel(mut self, label: CovLabel) -> Self {
        self.label = label;
        self
    }
}

/// Scene discretization: patches and their area elements.
#[derive(Debug, Clone)]
pub struct SceneGrid {
    patches: Vec<ScenePatch>,
    weights: Vec<f64>,
    center: usize,
    edge_left: usize,
    edge_right: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    if n == 1 {
        return (vec![(lo + hi) / 2.0], 1.0);
    }
    let step = (hi - lo) / (n - 1) as f64;
    ((0..n).map(|i| lo + step * i as f64).collect(), step)
}

impl SceneGrid {
    pub fn new(patches: Vec<ScenePatch>, weights: Vec<f64>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::config("scene", "scene has no patches"));
        }
        if patches.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                left: patches.len(),
                right: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config("scene.weights", "integration weights must be > 0"));
        }
        let mid = patches.len() / 2;
        Ok(Self {
            patches,
            weights,
            center: mid,
            edge_left: 0,
            edge_right: mid,
        })
    }

    /// n_r × n_θ polar grid, radius-major order, uniform dθ·dr weights.
    /// Angles in radians.
    pub fn polar(
        theta: (f64, f64),
        n_theta: usize,
        r: (f64, f64),
        n_r: usize,
        sigma_beta_sq: f64,
        gains: &[f64],
    ) -> Result<Self> {
        if n_theta == 0 || n_r == 0 {
            return Err(Error::config("scene.n_theta", "grid sizes must be >= 1"));
        }
        if !(theta.1 >= theta.0) || !(r.1 >= r.0) {
            return Err(Error::config("scene", "ranges must be ordered (min <= max)"));
        }
        let (thetas, dtheta) = linspace(theta.0, theta.1, n_theta);
        let (radii, dr) = linspace(r.0, r.1, n_r);
        let mut patches = Vec::with_capacity(n_theta * n_r);
        for &rr in &radii {
            for &t in &thetas {
                patches.push(ScenePatch::new(t, rr, sigma_beta_sq, gains.to_vec())?);
            }
        }
        let weights = vec![dtheta * dr; patches.len()];
        let mut grid = Self::new(patches, weights)?;
        let mid_r = n_r / 2;
        grid.center = mid_r * n_theta + n_theta / 2;
        grid.edge_left = mid_r * n_theta;
        grid.edge_right = mid_r * n_theta + n_theta - 1;
        Ok(grid)
    }

    /// n_x × n_z Cartesian grid (x lateral, z depth), depth-major order,
    /// uniform dx·dz weights.
    pub fn cartesian(
        x: (f64, f64),
        n_x: usize,
        z: (f64, f64),
        n_z: usize,
        sigma_beta_sq: f64,
        gains: &[f64],
    ) -> Result<Self> {
        if n_x == 0 || n_z == 0 {
            return Err(Error::config("scene.n_x", "grid sizes must be >= 1"));
        }
        if !(z.0 > 0.0) || !(x.1 >= x.0) || !(z.1 >= z.0) {
            return Err(Error::config("scene.z", "depths must be > 0 and ranges ordered"));
        }
        let (xs, dx) = linspace(x.0, x.1, n_x);
        let (zs, dz) = linspace(z.0, z.1, n_z);
        let mut patches = Vec::with_capacity(n_x * n_z);
        for &zz in &zs {
            for &xx in &xs {
                patches.push(ScenePatch::new(xx.atan2(zz), xx.hypot(zz), sigma_beta_sq, gains.to_vec())?);
            }
        }
        let weights = vec![dx * dz; patches.len()];
        let mut grid = Self::new(patches, weights)?;
        let mid = n_z / 2;
        grid.center = mid * n_x + n_x / 2;
        grid.edge_left = mid * n_x;
        grid.edge_right = mid * n_x + n_x - 1;
        Ok(grid)
    }

    pub fn patches(&self) -> &[ScenePatch] {
        &self.patches
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// weight · σ_β² of patch `i`.
    pub fn scattering_weight(&self, i: usize) -> f64 {
        self.weights[i] * self.patches[i].sigma_beta_sq
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn edge_left(&self) -> usize {
        self.edge_left
    }

    pub fn edge_right(&self) -> usize {
        self.edge_right
    }
}

/// R_a = E K E^H.
pub fn local_steering_covariance(kernel: &SteeringKernel, field_kernel: &KernelMatrix) -> Result<CovarianceMatrix> {
    kernel.check_grid(field_kernel.len())?;
    let k = complexify(field_kernel.entries());
    let raw = &kernel.entries * k * kernel.entries.adjoint();
    let cov = CovarianceMatrix::new(raw, CovLabel::Ra)?;
    cov.check()?;
    Ok(cov)
}

fn scene_sum<'a>(scene: &SceneGrid, dim: usize, terms: impl Iterator<Item = (usize, CMatrix)> + 'a) -> CMatrix {
    let mut acc = CMatrix::zeros(dim, dim);
    for (i, term) in terms {
        acc += term * Complex64::new(scene.scattering_weight(i), 0.0);
    }
    acc
}

/// R0 = Σ weight σ_β² a0 a0^H.
pub fn nominal_covariance(scene: &SceneGrid, a0: &[CVector]) -> Result<CovarianceMatrix> {
    if a0.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            left: scene.len(),
            right: a0.len(),
        });
    }
    let dim = a0[0].len();
    let raw = scene_sum(scene, dim, a0.iter().enumerate().map(|(i, a)| (i, a * a.adjoint())));
    CovarianceMatrix::new(raw, CovLabel::R0)
}

/// R_med = Σ weight σ_β² R_a.
pub fn medium_covariance(scene: &SceneGrid, local: &[CovarianceMatrix]) -> Result<CovarianceMatrix> {
    if local.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            left: scene.len(),
            right: local.len(),
        });
    }
    let dim = local[0].dim();
    let raw = scene_sum(scene, dim, local.iter().enumerate().map(|(i, r)| (i, r.entries().clone())));
    CovarianceMatrix::new(raw, CovLabel::Rmed)
}

/// R_c = R0 + R_med.
pub fn total_covariance(r0: &CovarianceMatrix, rmed: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    if r0.dim() != rmed.dim() {
        return Err(Error::DimensionMismatch {
            left: r0.dim(),
            right: rmed.dim(),
        });
    }
    CovarianceMatrix::new(r0.entries() + rmed.entries(), CovLabel::Rc)
}

/// (1/n) Σ x x^H, mean not subtracted (the perturbations are zero-mean).
pub fn sample_covariance(samples: &[CVector]) -> Result<CovarianceMatrix> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            found: samples.len(),
        });
    }
    let dim = samples[0].len();
    let mut acc = CMatrix::zeros(dim, dim);
    for x in samples {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: x.len() });
        }
        acc.gerc(Complex64::new(1.0, 0.0), x, x, Complex64::new(1.0, 0.0));
    }
    acc /= Complex64::new(samples.len() as f64, 0.0);
    CovarianceMatrix::new(acc, CovLabel::Sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    Exact,
    FirstOrder,
}

/// R0 + Σ weight σ_β² R_a^sample, where each patch's R_a^sample is the
/// sample covariance of its δa over the realizations.
pub fn mc_clutter_covariance(
    scene: &SceneGrid,
    r0: &CovarianceMatrix,
    kernels: &[SteeringKernel],
    medium: &MediumChannels,
    realizations: &[FieldRealization],
    mode: McMode,
) -> Result<CovarianceMatrix> {
    if kernels.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            left: scene.len(),
            right: kernels.len(),
        });
    }
    let mut local = Vec::with_capacity(kernels.len());
    for kernel in kernels {
        let samples = realizations
            .iter()
            .map(|r| match mode {
                McMode::Exact => perturb_steering_exact(kernel, medium, r).map(|p| p.delta_a),
                McMode::FirstOrder => perturb_steering_first_order(kernel, r),
            })
            .collect::<Result<Vec<_>>>()?;
        local.push(sample_covariance(&samples)?);
    }
    let rmed = medium_covariance(scene, &local)?;
    total_covariance(r0, &rmed)
}

/// Monte Carlo R_c from the exact steering a = a0 + δa, using the
/// first-order steering a¹ = a0 + δa¹ on the same draws as a control variate
/// with known mean R_c^theory:
///
/// R_c^th + (1/n) Σ_i Σ_p wσ² (a_i a_i^H − a¹_i a¹_i^H).
///
/// `exact[p][i]` and `first[p][i]` are δa for patch `p`, realization `i`.
pub fn control_variate_clutter_covariance(
    scene: &SceneGrid,
    rc_theory: &CovarianceMatrix,
    a0: &[CVector],
    exact: &[Vec<CVector>],
    first: &[Vec<CVector>],
    n: usize,
) -> Result<CovarianceMatrix> {
    if a0.len() != scene.len() || exact.len() != scene.len() || first.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            left: scene.len(),
            right: exact.len(),
        });
    }
    if n < 2 || exact.iter().chain(first).any(|v| v.len() < n) {
        return Err(Error::InsufficientSamples { required: n.max(2), found: exact.first().map_or(0, Vec::len) });
    }
    let dim = rc_theory.dim();
    let one = Complex64::new(1.0, 0.0);
    let mut acc = CMatrix::zeros(dim, dim);
    for p in 0..scene.len() {
        let w = Complex64::new(scene.scattering_weight(p) / n as f64, 0.0);
        for i in 0..n {
            let a = &a0[p] + &exact[p][i];
            let a1 = &a0[p] + &first[p][i];
            acc.gerc(w, &a, &a, one);
            acc.gerc(-w, &a1, &a1, one);
        }
    }
    CovarianceMatrix::new(rc_theory.entries() + acc, CovLabel::Rc)
}

/// Write `dimension,label` then one row per matrix row with interleaved
/// real/imaginary parts.
pub fn write_csv<W: Write>(cov: &CovarianceMatrix, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
    w.write_record([cov.dim().to_string(), cov.label().to_string()])?;
    for i in 0..cov.dim() {
        let mut row = Vec::with_capacity(2 * cov.dim());
        for j in 0..cov.dim() {
            let z = cov.entries()[(i, j)];
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<CovarianceMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = r.records();
    let header = records.next().ok_or_else(|| Error::Format("empty covariance file".into()))??;
    if header.len() != 2 {
        return Err(Error::Format("header must be `dimension,label`".into()));
    }
    let dim: usize = header[0]
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad dimension `{}`", &header[0])))?;
    let label: CovLabel = header[1].trim().parse()?;
    let mut m = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        let row = records
            .next()
            .ok_or_else(|| Error::Format(format!("expected {dim} rows, found {i}")))??;
        if row.len() != 2 * dim {
            return Err(Error::Format(format!("row {i} has {} fields, expected {}", row.len(), 2 * dim)));
        }
        for j in 0..dim {
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
            m[(i, j)] = Complex64::new(parse(&row[2 * j])?, parse(&row[2 * j + 1])?);
        }
    }
    CovarianceMatrix::new(m, label)
}
