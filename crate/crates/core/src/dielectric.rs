//! Relaxation-spectrum permittivity: the nominal response, the linear Debye
//! map from δg to δε and the resulting cross-frequency covariance.
//!
//! Time convention is e^{+jωt}; a passive medium has Im ε ≤ 0. All
//! permittivities here are relative.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{CMatrix, CVector, J};
use crate::relaxation_field::{FieldRealization, KernelMatrix, LogTauGrid};
use crate::{Error, Result};

/// ε∞ and the nominal density ḡ(u) on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalSpectrum {
    eps_inf: f64,
    gbar: Vec<f64>,
}

/// Parameters of the default Gaussian-bump nominal spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub eps_inf: f64,
    /// Centre relaxation time, seconds.
    pub center_tau: f64,
    /// Width in u-units.
    pub width: f64,
    /// Σ w ḡ, i.e. the static increment ε_s − ε∞.
    pub strength: f64,
}

impl Default for BumpSpec {
    fn default() -> Self {
        Self {
            eps_inf: 4.0,
            center_tau: 1e-9,
            width: 0.8,
            strength: 4.0,
        }
    }
}

impl NominalSpectrum {
    pub fn new(eps_inf: f64, gbar: Vec<f64>) -> Result<Self> {
        if !(eps_inf >= 1.0) || !eps_inf.is_finite() {
            return Err(Error::config("medium.eps_inf", format!("eps_inf must be >= 1 (got {eps_inf})")));
        }
        if gbar.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::config("medium.gbar", "nominal density must be finite and non-negative"));
        }
        Ok(Self { eps_inf, gbar })
    }

    pub fn gaussian_bump(grid: &LogTauGrid, spec: &BumpSpec) -> Result<Self> {
        if !(spec.center_tau > 0.0) || !(spec.width > 0.0) || !(spec.strength >= 0.0) {
            return Err(Error::config(
                "medium",
                "center_tau and width must be > 0, strength >= 0",
            ));
        }
        let u0 = spec.center_tau.ln();
        let shape: Vec<f64> = grid
            .points()
            .iter()
            .map(|u| (-0.5 * ((u - u0) / spec.width).powi(2)).exp())
            .collect();
        let mass: f64 = shape.iter().zip(grid.weights()).map(|(g, w)| g * w).sum();
        if mass == 0.0 && spec.strength > 0.0 {
            return Err(Error::config("medium.center_tau", "bump has no mass on the u-grid"));
        }
        let scale = if spec.strength == 0.0 { 0.0 } else { spec.strength / mass };
        Self::new(spec.eps_inf, shape.into_iter().map(|g| g * scale).collect())
    }

    pub fn eps_inf(&self) -> f64 {
        self.eps_inf
    }

    pub fn gbar(&self) -> &[f64] {
        &self.gbar
    }
}

/// D(ω, u) = w_u / (1 + jω e^u) for one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct DebyeRow {
    pub omega: f64,
    pub entries: CVector,
}

impl DebyeRow {
    /// Σ_u D(ω,u) x_u.
    pub fn apply(&self, x: &[f64]) -> Result<Complex64> {
        if x.len() != self.entries.len() {
            return Err(Error::GridMismatch {
                expected: self.entries.len(),
                found: x.len(),
            });
        }
        Ok(self.entries.iter().zip(x).map(|(d, v)| d * v).sum())
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::InvalidFrequency(omega));
    }
    Ok(())
}

pub fn debye_row(grid: &LogTauGrid, omega: f64) -> Result<DebyeRow> {
    check_omega(omega)?;
    let entries = CVector::from_iterator(
        grid.len(),
        grid.points()
            .iter()
            .zip(grid.weights())
            .map(|(u, w)| Complex64::new(*w, 0.0) / (Complex64::new(1.0, 0.0) + J * (omega * u.exp()))),
    );
    Ok(DebyeRow { omega, entries })
}

/// Rows of D stacked for several frequencies (M × grid).
pub fn debye_matrix(grid: &LogTauGrid, omegas: &[f64]) -> Result<CMatrix> {
    let mut d = CMatrix::zeros(omegas.len(), grid.len());
    for (m, &omega) in omegas.iter().enumerate() {
        let row = debye_row(grid, omega)?;
        d.row_mut(m).copy_from(&row.entries.transpose());
    }
    Ok(d)
}

/// ε∞ + Σ_u w_u ḡ(u) / (1 + jω e^u).
pub fn nominal_permittivity(spectrum: &NominalSpectrum, grid: &LogTauGrid, omega: f64) -> Result<Complex64> {
    grid.check_len(spectrum.gbar.len())?;
    let row = debye_row(grid, omega)?;
    Ok(Complex64::new(spectrum.eps_inf, 0.0) + row.apply(&spectrum.gbar)?)
}

/// Σ_u w_u δg(u) / (1 + jω e^u).
pub fn perturb_permittivity(realization: &FieldRealization, grid: &LogTauGrid, omega: f64) -> Result<Complex64> {
    grid.check_len(realization.values.len())?;
    debye_row(grid, omega)?.apply(realization.values.as_slice())
}

/// δε at every channel frequency for one realization: D · δg.
pub fn perturb_permittivity_channels(debye: &CMatrix, values: &DVector<f64>) -> Result<CVector> {
    if debye.ncols() != values.len() {
        return Err(Error::GridMismatch {
            expected: debye.ncols(),
            found: values.len(),
        });
    }
    Ok(debye * values.map(|v| Complex64::new(v, 0.0)))
}

/// Cov(δε(ω), δε(ω′)) = Σ_u Σ_u′ D(ω,u) K(u,u′) conj(D(ω′,u′)).
pub fn permittivity_covariance(kernel: &KernelMatrix, omega: f64, omega_p: f64) -> Result<Complex64> {
    let a = debye_row(kernel.grid(), omega)?;
    let b = debye_row(kernel.grid(), omega_p)?;
    let k = kernel.entries();
    let n = kernel.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut inner = Complex64::new(0.0, 0.0);
        for j in 0..n {
            inner += b.entries[j].conj() * k[(i, j)];
        }
        acc += a.entries[i] * inner;
    }
    Ok(acc)
}

/// C_ε = D K D^H over a set of frequencies.
pub fn permittivity_covariance_matrix(kernel: &KernelMatrix, omegas: &[f64]) -> Result<CMatrix> {
    let d = debye_matrix(kernel.grid(), omegas)?;
    Ok(covariance_from_debye(&d, kernel))
}

pub(crate) fn covariance_from_debye(d: &CMatrix, kernel: &KernelMatrix) -> CMatrix {
    let k = crate::linalg::complexify(kernel.entries());
    d * k * d.adjoint()
}
