//! Effective rank, alignment, effective subspace dimension p_ρ, the
//! p_ρ ≥ ρ² r_eff bound and the γ/η separability metrics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceMatrix;
use crate::linalg::{frobenius_inner, frobenius_norm, hermitian_eigen, trace, CMatrix, CVector};
use crate::{Error, Result};

/// (tr R)² / ‖R‖_F².
pub fn effective_rank_of(entries: &CMatrix) -> Result<f64> {
    let fro = frobenius_norm(entries);
    if fro == 0.0 {
        return Err(Error::UndefinedMetric("effective rank of a zero matrix"));
    }
    let tr = trace(entries).re;
    Ok(tr * tr / (fro * fro))
}

pub fn effective_rank(matrix: &CovarianceMatrix) -> Result<f64> {
    effective_rank_of(matrix.entries())
}

/// ⟨R0, R_med⟩_F / (‖R0‖_F ‖R_med‖_F).
pub fn alignment_mu(r0: &CovarianceMatrix, rmed: &CovarianceMatrix) -> Result<f64> {
    let (a, b) = (frobenius_norm(r0.entries()), frobenius_norm(rmed.entries()));
    if a == 0.0 || b == 0.0 {
        return Err(Error::UndefinedMetric("alignment with a zero matrix"));
    }
    Ok(frobenius_inner(r0.entries(), rmed.entries()).re / (a * b))
}

/// r_eff(R0 + R_med) from traces, Frobenius norms and μ alone.
pub fn effective_rank_from_parts(r0: &CovarianceMatrix, rmed: &CovarianceMatrix) -> Result<f64> {
    let mu = alignment_mu(r0, rmed)?;
    let (t0, tm) = (r0.trace(), rmed.trace());
    let (f0, fm) = (frobenius_norm(r0.entries()), frobenius_norm(rmed.entries()));
    let num = (t0 + tm).powi(2);
    let den = f0 * f0 + fm * fm + 2.0 * mu * f0 * fm;
    Ok(num / den)
}

/// KL form of r_eff(R_med): (Σ λ_q tr S_q)² / Σ_q Σ_p λ_q λ_p ⟨S_q, S_p⟩_F.
pub fn kl_effective_rank_med(lambdas: &[f64], components: &[CMatrix]) -> Result<f64> {
    if lambdas.is_empty() || components.is_empty() {
        return Err(Error::UndefinedMetric("KL effective rank with no modes"));
    }
    if lambdas.len() != components.len() {
        return Err(Error::DimensionMismatch {
            left: lambdas.len(),
            right: components.len(),
        });
    }
    let num: f64 = lambdas.iter().zip(components).map(|(l, s)| l * trace(s).re).sum();
    let mut den = 0.0;
    for (q, sq) in components.iter().enumerate() {
        for (p, sp) in components.iter().enumerate().skip(q) {
            let term = lambdas[q] * lambdas[p] * frobenius_inner(sq, sp).re;
            den += if p == q { term } else { 2.0 * term };
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("KL effective rank of a zero expansion"));
    }
    Ok(num * num / den)
}

/// Non-increasing eigenvalues (negatives from rounding clamped to 0) and the
/// matching orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
}

impl EigenSpectrum {
    pub fn new(matrix: &CovarianceMatrix) -> Self {
        Self::of(matrix.entries())
    }

    pub fn of(entries: &CMatrix) -> Self {
        let (mut values, vectors) = hermitian_eigen(entries);
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
        Self {
            eigenvalues: values,
            eigenvectors: vectors,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// 1 / Σ p_m² with p_m = λ_m / Σλ.
    pub fn effective_rank(&self) -> Result<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return Err(Error::UndefinedMetric("effective rank of a zero spectrum"));
        }
        Ok(1.0 / self.eigenvalues.iter().map(|l| (l / total).powi(2)).sum::<f64>())
    }

    /// Cumulative fractions Σ_{m≤p} λ_m / Σ λ.
    pub fn cumulative_fractions(&self) -> Result<Vec<f64>> {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return Err(Error::UndefinedMetric("energy fractions of a zero spectrum"));
        }
        let mut acc = 0.0;
        Ok(self
            .eigenvalues
            .iter()
            .map(|l| {
                acc += l;
                acc / total
            })
            .collect())
    }
}

/// Smallest p whose cumulative eigenvalue fraction reaches ρ.
pub fn effective_subspace_dim(spectrum: &EigenSpectrum, rho: f64) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::config("rho", format!("rho must lie in (0, 1) (got {rho})")));
    }
    let fractions = spectrum.cumulative_fractions()?;
    Ok(fractions
        .iter()
        .position(|f| *f >= rho)
        .map_or(fractions.len(), |i| i + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub p: usize,
    pub gamma: f64,
    pub eta: f64,
}

/// γ = ‖P_p a_t‖² / ‖a_t‖², η = 1 − γ.
pub fn separability(spectrum: &EigenSpectrum, p: usize, target: &CVector) -> Result<SeparabilityReport> {
    if p == 0 || p > spectrum.dim() {
        return Err(Error::InvalidTruncation {
            order: p,
            available: spectrum.dim(),
        });
    }
    if target.len() != spectrum.dim() {
        return Err(Error::DimensionMismatch {
            left: spectrum.dim(),
            right: target.len(),
        });
    }
    let norm = target.norm_squared();
    if norm == 0.0 {
        return Err(Error::UndefinedMetric("separability of a zero target"));
    }
    let projected: f64 = (0..p)
        .map(|m| {
            let u = spectrum.eigenvectors.column(m);
            let c: Complex64 = u.iter().zip(target.iter()).map(|(a, b)| a.conj() * b).sum();
            c.norm_sqr()
        })
        .sum();
    let gamma = (projected / norm).clamp(0.0, 1.0);
    Ok(SeparabilityReport { p, gamma, eta: 1.0 - gamma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub holds: bool,
    pub p_rho: usize,
    pub r_eff: f64,
    pub slack: f64,
}

/// p_ρ ≥ ρ² r_eff with slack p_ρ − ρ² r_eff.
pub fn bound_check(spectrum: &EigenSpectrum, rho: f64) -> Result<BoundCheck> {
    let p_rho = effective_subspace_dim(spectrum, rho)?;
    let r_eff = spectrum.effective_rank()?;
    let slack = p_rho as f64 - rho * rho * r_eff;
    Ok(BoundCheck {
        holds: slack >= 0.0,
        p_rho,
        r_eff,
        slack,
    })
}
