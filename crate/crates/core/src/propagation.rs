//! Wavenumbers, path lengths, nominal steering vectors and the steering
//! sensitivity operator that carries δg into channel-domain perturbations.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dielectric::{debye_matrix, nominal_permittivity, perturb_permittivity_channels, NominalSpectrum};
use crate::linalg::{CMatrix, CVector, J};
use crate::relaxation_field::{FieldRealization, LogTauGrid};
use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// f_m = f0 + n_m Δf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub f0: f64,
    pub delta_f: f64,
    pub coding: Vec<f64>,
}

impl FrequencyPlan {
    pub fn new(f0: f64, delta_f: f64, coding: Vec<f64>) -> Result<Self> {
        let plan = Self { f0, delta_f, coding };
        if plan.coding.is_empty() {
            return Err(Error::config("system.channels", "at least one channel is required"));
        }
        if let Some(f) = plan.frequencies().into_iter().find(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::config("system.f0", format!("channel frequency {f} Hz is not positive")));
        }
        Ok(plan)
    }

    /// Linear coding n_m = m − 1 for m = 1..=channels.
    pub fn linear(f0: f64, delta_f: f64, channels: usize) -> Result<Self> {
        Self::new(f0, delta_f, (0..channels).map(|m| m as f64).collect())
    }

    pub fn channels(&self) -> usize {
        self.coding.len()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.coding.iter().map(|n| self.f0 + n * self.delta_f).collect()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.frequencies().into_iter().map(|f| 2.0 * PI * f).collect()
    }
}

/// Channel positions d_m along the surface, metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::config("system.positions", "array has no channels"));
        }
        if positions.iter().any(|d| !d.is_finite()) || positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("system.positions", "positions must be finite and strictly increasing"));
        }
        Ok(Self { positions })
    }

    /// Uniform centred array with spacing `fraction` × the wavelength at
    /// `f0` in a medium of relative permittivity `eps`.
    pub fn uniform_in_medium(channels: usize, f0: f64, eps: Complex64, fraction: f64) -> Result<Self> {
        let n = eps.sqrt().re;
        if !(n > 0.0) || !(fraction > 0.0) || !(f0 > 0.0) {
            return Err(Error::config("system.spacing_wavelengths", "spacing must be positive"));
        }
        let spacing = fraction * C0 / (f0 * n);
        let mid = (channels as f64 - 1.0) / 2.0;
        Self::new((0..channels).map(|m| (m as f64 - mid) * spacing).collect())
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn channels(&self) -> usize {
        self.positions.len()
    }
}

/// One scattering cell of the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePatch {
    pub theta: f64,
    pub r: f64,
    pub sigma_beta_sq: f64,
    pub gains: Vec<f64>,
}

impl ScenePatch {
    pub fn new(theta: f64, r: f64, sigma_beta_sq: f64, gains: Vec<f64>) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() || !theta.is_finite() {
            return Err(Error::config("scene.r", format!("patch radius must be > 0 (got {r})")));
        }
        if !(sigma_beta_sq >= 0.0) {
            return Err(Error::config("scene.sigma_beta_sq", "scattering power must be >= 0"));
        }
        if gains.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::config("system.gains", "gains must be > 0"));
        }
        Ok(Self {
            theta,
            r,
            sigma_beta_sq,
            gains,
        })
    }

    /// Cartesian position (x, z) with z the depth.
    pub fn position(&self) -> (f64, f64) {
        (self.r * self.theta.sin(), self.r * self.theta.cos())
    }
}

/// Two-way straight-ray length between channel `m` at (d_m, 0) and the patch.
pub fn path_length(geometry: &ArrayGeometry, patch: &ScenePatch, m: usize) -> Result<f64> {
    let d = *geometry.positions.get(m).ok_or(Error::InvalidChannel {
        index: m,
        channels: geometry.channels(),
    })?;
    let (x, z) = patch.position();
    Ok(2.0 * (x - d).hypot(z))
}

pub fn path_lengths(geometry: &ArrayGeometry, patch: &ScenePatch) -> Result<Vec<f64>> {
    (0..geometry.channels()).map(|m| path_length(geometry, patch, m)).collect()
}

fn principal_index(eps_rel: Complex64) -> Result<Complex64> {
    if eps_rel == Complex64::new(0.0, 0.0) {
        return Err(Error::DegenerateMedium);
    }
    Ok(eps_rel.sqrt())
}

/// k = (ω/c0) √ε with the principal root (Re ≥ 0).
pub fn complex_wavenumber(eps_rel: Complex64, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0) {
        return Err(Error::InvalidFrequency(omega));
    }
    Ok(principal_index(eps_rel)? * (omega / C0))
}

/// dk/dε at the nominal permittivity: ω / (2 c0 √ε̄).
pub fn wavenumber_sensitivity(eps_rel_nominal: Complex64, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0) {
        return Err(Error::InvalidFrequency(omega));
    }
    Ok(Complex64::new(omega / (2.0 * C0), 0.0) / principal_index(eps_rel_nominal)?)
}

/// |δk_exact − s·δε| / |δk_exact|, with 0/0 = 0.
pub fn linearization_error_wavenumber(eps_rel_nominal: Complex64, delta_eps: Complex64, omega: f64) -> Result<f64> {
    let k_bar = complex_wavenumber(eps_rel_nominal, omega)?;
    let exact = complex_wavenumber(eps_rel_nominal + delta_eps, omega)? - k_bar;
    let linear = wavenumber_sensitivity(eps_rel_nominal, omega)? * delta_eps;
    let num = (exact - linear).norm();
    let den = exact.norm();
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

/// Nominal medium evaluated at every channel frequency, plus the Debye rows
/// D[m][u] that map δg to δε.
#[derive(Debug, Clone)]
pub struct MediumChannels {
    pub omegas: Vec<f64>,
    pub eps_bar: Vec<Complex64>,
    pub k_bar: Vec<Complex64>,
    pub sensitivity: Vec<Complex64>,
    pub debye: CMatrix,
}

impl MediumChannels {
    pub fn new(plan: &FrequencyPlan, spectrum: &NominalSpectrum, grid: &LogTauGrid) -> Result<Self> {
        let omegas = plan.omegas();
        let eps_bar = omegas
            .iter()
            .map(|&w| nominal_permittivity(spectrum, grid, w))
            .collect::<Result<Vec<_>>>()?;
        let k_bar = omegas
            .iter()
            .zip(&eps_bar)
            .map(|(&w, &e)| complex_wavenumber(e, w))
            .collect::<Result<Vec<_>>>()?;
        let sensitivity = omegas
            .iter()
            .zip(&eps_bar)
            .map(|(&w, &e)| wavenumber_sensitivity(e, w))
            .collect::<Result<Vec<_>>>()?;
        let debye = debye_matrix(grid, &omegas)?;
        Ok(Self {
            omegas,
            eps_bar,
            k_bar,
            sensitivity,
            debye,
        })
    }

    pub fn channels(&self) -> usize {
        self.omegas.len()
    }

    pub fn grid_len(&self) -> usize {
        self.debye.ncols()
    }

    /// δε per channel for one realization.
    pub fn delta_eps(&self, values: &DVector<f64>) -> Result<CVector> {
        perturb_permittivity_channels(&self.debye, values)
    }

    /// Exact δk = k(ε̄ + δε) − k̄ per channel, plus the number of channels
    /// whose perturbed root left the nominal branch.
    pub fn delta_k_exact(&self, delta_eps: &CVector) -> Result<WavenumberPerturbation> {
        let mut out = CVector::zeros(self.channels());
        let mut switches = 0;
        for m in 0..self.channels() {
            let eps = self.eps_bar[m] + delta_eps[m];
            let k = complex_wavenumber(eps, self.omegas[m])?;
            if branch_switched(self.k_bar[m], k) {
                switches += 1;
            }
            out[m] = k - self.k_bar[m];
        }
        Ok(WavenumberPerturbation {
            delta_k: out,
            branch_switches: switches,
        })
    }

    /// First-order δk = s ∘ δε.
    pub fn delta_k_linear(&self, delta_eps: &CVector) -> CVector {
        CVector::from_iterator(self.channels(), delta_eps.iter().zip(&self.sensitivity).map(|(d, s)| d * s))
    }
}

/// A perturbed root is on a different branch if it sits in the opposite
/// half-plane to the nominal one, or its loss sign flips.
fn branch_switched(nominal: Complex64, perturbed: Complex64) -> bool {
    let opposite = (perturbed * nominal.conj()).re < 0.0;
    let loss_flip = nominal.im < 0.0 && perturbed.im > 0.0 || nominal.im > 0.0 && perturbed.im < 0.0;
    opposite || loss_flip || perturbed.re < 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavenumberPerturbation {
    pub delta_k: CVector,
    pub branch_switches: usize,
}

/// a0_m = G_m exp(−j k̄_m L_m) from explicit path lengths.
pub fn nominal_steering_from_lengths(medium: &MediumChannels, lengths: &[f64], gains: &[f64]) -> Result<CVector> {
    let m = medium.channels();
    if lengths.len() != m || gains.len() != m {
        return Err(Error::DimensionMismatch {
            left: m,
            right: if lengths.len() != m { lengths.len() } else { gains.len() },
        });
    }
    Ok(CVector::from_iterator(
        m,
        (0..m).map(|i| gains[i] * (-J * medium.k_bar[i] * lengths[i]).exp()),
    ))
}

pub fn nominal_steering(geometry: &ArrayGeometry, medium: &MediumChannels, patch: &ScenePatch) -> Result<CVector> {
    nominal_steering_from_lengths(medium, &path_lengths(geometry, patch)?, &patch.gains)
}

/// E[m][u] = w_u · (−j L_m a0_m s_m) / (1 + jω_m e^u). Quadrature weights
/// live here and nowhere downstream.
#[derive(Debug, Clone)]
pub struct SteeringKernel {
    pub entries: CMatrix,
    pub a0: CVector,
    pub lengths: Vec<f64>,
}

impl SteeringKernel {
    pub fn from_lengths(medium: &MediumChannels, lengths: &[f64], gains: &[f64]) -> Result<Self> {
        let a0 = nominal_steering_from_lengths(medium, lengths, gains)?;
        let mut entries = medium.debye.clone();
        for m in 0..medium.channels() {
            let scale = -J * lengths[m] * a0[m] * medium.sensitivity[m];
            for v in entries.row_mut(m).iter_mut() {
                *v *= scale;
            }
        }
        Ok(Self {
            entries,
            a0,
            lengths: lengths.to_vec(),
        })
    }

    pub fn channels(&self) -> usize {
        self.entries.nrows()
    }

    pub fn grid_len(&self) -> usize {
        self.entries.ncols()
    }

    pub(crate) fn check_grid(&self, found: usize) -> Result<()> {
        if found != self.grid_len() {
            return Err(Error::GridMismatch {
                expected: self.grid_len(),
                found,
            });
        }
        Ok(())
    }

    /// E · x for a real grid vector.
    pub fn apply(&self, x: &DVector<f64>) -> Result<CVector> {
        self.check_grid(x.len())?;
        Ok(&self.entries * x.map(|v| Complex64::new(v, 0.0)))
    }

    /// a0 ∘ (exp(−j δk L) − 1).
    pub fn exact_from_delta_k(&self, delta_k: &CVector) -> CVector {
        CVector::from_iterator(
            self.channels(),
            (0..self.channels()).map(|m| self.a0[m] * ((-J * delta_k[m] * self.lengths[m]).exp() - 1.0)),
        )
    }
}

pub fn steering_kernel(geometry: &ArrayGeometry, medium: &MediumChannels, patch: &ScenePatch) -> Result<SteeringKernel> {
    SteeringKernel::from_lengths(medium, &path_lengths(geometry, patch)?, &patch.gains)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactPerturbation {
    pub delta_a: CVector,
    pub branch_switches: usize,
}

/// Full nonlinear chain δg → δε → δk → δa for one patch.
pub fn perturb_steering_exact(
    kernel: &SteeringKernel,
    medium: &MediumChannels,
    realization: &FieldRealization,
) -> Result<ExactPerturbation> {
    kernel.check_grid(realization.values.len())?;
    let de = medium.delta_eps(&realization.values)?;
    let dk = medium.delta_k_exact(&de)?;
    Ok(ExactPerturbation {
        delta_a: kernel.exact_from_delta_k(&dk.delta_k),
        branch_switches: dk.branch_switches,
    })
}

/// δa¹ = E · δg.
pub fn perturb_steering_first_order(kernel: &SteeringKernel, realization: &FieldRealization) -> Result<CVector> {
    kernel.apply(&realization.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dielectric::BumpSpec;
    use crate::relaxation_field::{build_kernel_matrix, sample_field, MaternParams, RealizationStream};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn setup() -> (LogTauGrid, MediumChannels, ArrayGeometry) {
        let grid = LogTauGrid::from_tau_range(1e-10, 1e-7, 128).unwrap();
        let spectrum = NominalSpectrum::gaussian_bump(&grid, &BumpSpec::default()).unwrap();
        let plan = FrequencyPlan::linear(1e9, 2e6, 10).unwrap();
        let medium = MediumChannels::new(&plan, &spectrum, &grid).unwrap();
        let geometry = ArrayGeometry::uniform_in_medium(10, 1e9, medium.eps_bar[0], 0.5).unwrap();
        (grid, medium, geometry)
    }

    #[test]
    fn path_length_examples() {
        let geometry = ArrayGeometry::new(vec![-0.3, 0.0, 0.3]).unwrap();
        let below = ScenePatch::new((0.3f64 / 0.5).asin(), 0.5, 1.0, vec![1.0; 3]).unwrap();
        assert!((path_length(&geometry, &below, 2).unwrap() - 2.0 * 0.5 * (0.3f64 / 0.5).asin().cos()).abs() < 1e-15);

        let broadside = ScenePatch::new(0.0, 0.7, 1.0, vec![1.0; 3]).unwrap();
        assert!((path_length(&geometry, &broadside, 1).unwrap() - 1.4).abs() < 1e-15);
        assert_eq!(path_length(&geometry, &broadside, 0).unwrap(), path_length(&geometry, &broadside, 2).unwrap());

        let p = ScenePatch::new(0.0, 0.4, 1.0, vec![1.0; 3]).unwrap();
        assert!((path_length(&geometry, &p, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(path_length(&geometry, &p, 3), Err(Error::InvalidChannel { index: 3, channels: 3 })));
    }

    #[test]
    fn wavenumber_examples() {
        let w = 2.0 * PI * 1e9;
        let k = complex_wavenumber(c(4.0, 0.0), w).unwrap();
        assert!((k - c(2.0 * w / C0, 0.0)).norm() < 1e-12 && k.im == 0.0);
        assert!((complex_wavenumber(c(1.0, 0.0), w).unwrap() - c(w / C0, 0.0)).norm() < 1e-12);
        let lossy = complex_wavenumber(c(0.0, -1.0), w).unwrap();
        assert!((lossy.re + lossy.im).abs() < 1e-12 && lossy.re > 0.0);
        assert!((lossy.norm() - w / C0).abs() < 1e-9);
        assert!(matches!(complex_wavenumber(c(0.0, 0.0), w), Err(Error::DegenerateMedium)));

        assert!((wavenumber_sensitivity(c(4.0, 0.0), w).unwrap() - c(w / (4.0 * C0), 0.0)).norm() < 1e-15);
        assert!((wavenumber_sensitivity(c(1.0, 0.0), w).unwrap() - c(w / (2.0 * C0), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sensitivity_matches_finite_difference() {
        let w = 2.0 * PI * 1.2e9;
        for eps in [c(4.0, 0.0), c(7.3, -1.1), c(2.0, -3.0)] {
            let h = 1e-6;
            let fd = (complex_wavenumber(eps + h, w).unwrap() - complex_wavenumber(eps - h, w).unwrap()) / (2.0 * h);
            let s = wavenumber_sensitivity(eps, w).unwrap();
            assert!((fd - s).norm() / s.norm() < 1e-6);
        }
    }

    #[test]
    fn linearization_error_trend() {
        let w = 2.0 * PI * 1e9;
        let eps = c(7.0, -1.5);
        assert_eq!(linearization_error_wavenumber(eps, c(0.0, 0.0), w).unwrap(), 0.0);
        let dir = c(0.6, 0.8);
        let errs: Vec<f64> = [1e-3, 2e-3, 4e-3]
            .iter()
            .map(|s| linearization_error_wavenumber(eps, dir * (s * eps.norm()), w).unwrap())
            .collect();
        assert!(errs[0] < errs[1] && errs[1] < errs[2]);
        for pair in errs.windows(2) {
            let ratio = pair[1] / pair[0];
            assert!((ratio - 2.0).abs() < 0.05, "ratio {ratio}");
        }
    }

    #[test]
    fn nominal_steering_examples() {
        let (_, medium, geometry) = setup();
        let zeros = vec![0.0; 10];
        let gains: Vec<f64> = (0..10).map(|m| 1.0 + m as f64 * 0.1).collect();
        let a0 = nominal_steering_from_lengths(&medium, &zeros, &gains).unwrap();
        assert!(a0.iter().zip(&gains).all(|(a, g)| (*a - c(*g, 0.0)).norm() == 0.0));

        let patch = ScenePatch::new(0.2, 0.3, 1.0, vec![1.0; 10]).unwrap();
        let a0 = nominal_steering(&geometry, &medium, &patch).unwrap();
        assert!(a0.iter().all(|a| a.norm() <= 1.0));

        // lossless medium, single channel
        let grid = LogTauGrid::trapezoid(0.0, 1.0, 2).unwrap();
        let lossless = NominalSpectrum::new(4.0, vec![0.0; 2]).unwrap();
        let plan = FrequencyPlan::linear(1e9, 2e6, 1).unwrap();
        let med = MediumChannels::new(&plan, &lossless, &grid).unwrap();
        let a = nominal_steering_from_lengths(&med, &[1.0], &[1.0]).unwrap();
        let w = 2.0 * PI * 1e9;
        let phase = -2.0 * w / C0;
        assert!((a[0].norm() - 1.0).abs() < 1e-15);
        assert!((a[0] - c(phase.cos(), phase.sin())).norm() < 1e-12);
    }

    #[test]
    fn steering_kernel_examples() {
        let (grid, medium, geometry) = setup();
        let mut lengths = vec![0.5; 10];
        lengths[3] = 0.0;
        let k = SteeringKernel::from_lengths(&medium, &lengths, &[1.0; 10]).unwrap();
        assert!(k.entries.row(3).iter().all(|v| v.norm() == 0.0));

        let patch = ScenePatch::new(-0.3, 0.25, 1.0, vec![1.0; 10]).unwrap();
        let k = steering_kernel(&geometry, &medium, &patch).unwrap();
        let zero = FieldRealization {
            values: DVector::zeros(grid.len()),
            stream: RealizationStream { seed: 0, index: 0 },
        };
        assert!(perturb_steering_first_order(&k, &zero).unwrap().iter().all(|v| v.norm() == 0.0));
        let exact = perturb_steering_exact(&k, &medium, &zero).unwrap();
        assert!(exact.delta_a.iter().all(|v| v.norm() == 0.0));

        // kernel product vs the chain δε → s δε → −j L a0 δk
        let x = DVector::from_fn(grid.len(), |i, _| (i as f64 * 0.21).cos() * 0.03);
        let r = FieldRealization {
            values: x.clone(),
            stream: RealizationStream { seed: 0, index: 0 },
        };
        let via_kernel = perturb_steering_first_order(&k, &r).unwrap();
        let de = medium.delta_eps(&x).unwrap();
        let dk = medium.delta_k_linear(&de);
        for m in 0..10 {
            let chain = -J * k.lengths[m] * k.a0[m] * dk[m];
            assert!((via_kernel[m] - chain).norm() <= 1e-14 * chain.norm().max(1e-300) + 1e-18);
        }

        let y = DVector::from_fn(grid.len(), |i, _| (i as f64 * 0.05).sin() * 0.02);
        let sum = k.apply(&(&x + &y)).unwrap();
        let parts = k.apply(&x).unwrap() + k.apply(&y).unwrap();
        assert!((&sum - &parts).norm() <= 1e-14 * parts.norm());
    }

    #[test]
    fn exact_converges_to_first_order() {
        let (grid, medium, geometry) = setup();
        let kernel = build_kernel_matrix(&grid, &MaternParams::new(0.03, 1.5, 1.0).unwrap()).unwrap();
        let draw = sample_field(&kernel, 11, 1).unwrap().remove(0);
        let patch = ScenePatch::new(0.4, 0.35, 1.0, vec![1.0; 10]).unwrap();
        let k = steering_kernel(&geometry, &medium, &patch).unwrap();
        let mut prev = f64::INFINITY;
        for scale in [1.0, 0.5, 0.25] {
            let r = FieldRealization {
                values: &draw.values * scale,
                stream: draw.stream,
            };
            let exact = perturb_steering_exact(&k, &medium, &r).unwrap();
            assert_eq!(exact.branch_switches, 0);
            let first = perturb_steering_first_order(&k, &r).unwrap();
            let err = (&exact.delta_a - &first).norm() / exact.delta_a.norm();
            assert!(err < prev);
            prev = err;
            let a = &k.a0 + &exact.delta_a;
            assert!(a.iter().all(|v| v.norm() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn channel_permutation_permutes_steering() {
        let (_, medium, _) = setup();
        let lengths: Vec<f64> = (0..10).map(|m| 0.4 + 0.03 * m as f64).collect();
        let perm = [3, 1, 4, 0, 9, 2, 6, 5, 8, 7];
        let base = nominal_steering_from_lengths(&medium, &lengths, &[1.0; 10]).unwrap();
        // permuting both channels (frequencies) and lengths must permute a0
        let plan = FrequencyPlan::new(1e9, 2e6, perm.iter().map(|&p| p as f64).collect()).unwrap();
        let grid = LogTauGrid::from_tau_range(1e-10, 1e-7, 128).unwrap();
        let spectrum = NominalSpectrum::gaussian_bump(&grid, &BumpSpec::default()).unwrap();
        let pm = MediumChannels::new(&plan, &spectrum, &grid).unwrap();
        let pl: Vec<f64> = perm.iter().map(|&p| lengths[p]).collect();
        let permuted = nominal_steering_from_lengths(&pm, &pl, &[1.0; 10]).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((permuted[i] - base[p]).norm() < 1e-12);
        }
    }

    #[test]
    fn branch_switch_detection() {
        let nominal = c(1.0, -0.1);
        assert!(!branch_switched(nominal, c(1.1, -0.05)));
        assert!(branch_switched(nominal, c(1.0, 0.1)));
        assert!(branch_switched(nominal, c(-0.5, -0.1)));
    }
}
