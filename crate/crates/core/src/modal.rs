//! KL modes pushed through the steering operator: h_q = E φ_q, the modal
//! components S_q, truncated reconstructions and their closure errors.

use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovLabel, CovarianceMatrix, SceneGrid};
use crate::linalg::{guarded_relative_error, CMatrix, CVector};
use crate::propagation::SteeringKernel;
use crate::relaxation_field::KLBasis;
use crate::spectral::effective_rank_of;
use crate::{Error, Result};

/// h_q = E φ_q. E already carries the quadrature weights, so φ_q enters
/// unweighted.
pub fn propagate_mode(kernel: &SteeringKernel, phi_q: &DVector<f64>) -> Result<CVector> {
    kernel.apply(phi_q)
}

/// S_q = Σ_patches weight σ_β² h_q h_q^H.
pub fn modal_component(scene: &SceneGrid, modes: &[CVector]) -> Result<CMatrix> {
    if modes.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            left: scene.len(),
            right: modes.len(),
        });
    }
    let dim = modes[0].len();
    let mut acc = CMatrix::zeros(dim, dim);
    for (i, h) in modes.iter().enumerate() {
        acc.gerc(Complex64::new(scene.scattering_weight(i), 0.0), h, h, Complex64::new(1.0, 0.0));
    }
    Ok(acc)
}

/// First `order` KL modes propagated to every patch, with their scene
/// components.
#[derive(Debug, Clone)]
pub struct ModalSet {
    lambdas: Vec<f64>,
    /// `modes[p][q]` = h_q at patch p.
    modes: Vec<Vec<CVector>>,
    components: Vec<CMatrix>,
}

impl ModalSet {
    pub fn build(kl: &KLBasis, kernels: &[SteeringKernel], scene: &SceneGrid, order: usize) -> Result<Self> {
        if order == 0 || order > kl.len() {
            return Err(Error::InvalidTruncation {
                order,
                available: kl.len(),
            });
        }
        let phis: Vec<DVector<f64>> = (0..order).map(|q| kl.eigenfunctions().column(q).into_owned()).collect();
        let modes = kernels
            .iter()
            .map(|k| phis.iter().map(|phi| propagate_mode(k, phi)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let components = (0..order)
            .map(|q| {
                let hq: Vec<CVector> = modes.iter().map(|m: &Vec<CVector>| m[q].clone()).collect();
                modal_component(scene, &hq)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lambdas: kl.eigenvalues()[..order].to_vec(),
            modes,
            components,
        })
    }

    pub fn order(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn components(&self) -> &[CMatrix] {
        &self.components
    }

    pub fn modes(&self, patch: usize) -> &[CVector] {
        &self.modes[patch]
    }

    fn check_order(&self, q: usize) -> Result<()> {
        if q == 0 || q > self.order() {
            return Err(Error::InvalidTruncation {
                order: q,
                available: self.order(),
            });
        }
        Ok(())
    }

    /// Σ_{q<Q} λ_q S_q.
    pub fn rmed(&self, q: usize) -> Result<CMatrix> {
        self.check_order(q)?;
        let dim = self.components[0].nrows();
        let mut acc = CMatrix::zeros(dim, dim);
        for (l, s) in self.lambdas[..q].iter().zip(&self.components) {
            acc += s * Complex64::new(*l, 0.0);
        }
        Ok(acc)
    }

    /// Σ_{q<Q} λ_q h_q h_q^H at one patch.
    pub fn local(&self, patch: usize, q: usize) -> Result<CMatrix> {
        self.check_order(q)?;
        let dim = self.components[0].nrows();
        let mut acc = CMatrix::zeros(dim, dim);
        for (l, h) in self.lambdas[..q].iter().zip(&self.modes[patch]) {
            acc.gerc(Complex64::new(*l, 0.0), h, h, Complex64::new(1.0, 0.0));
        }
        Ok(acc)
    }
}

/// Directly-propagated covariances that truncated reconstructions are
/// compared against.
#[derive(Debug, Clone, Copy)]
pub struct ClosureTargets<'a> {
    pub r0: &'a CovarianceMatrix,
    pub rmed: &'a CovarianceMatrix,
    pub rc: &'a CovarianceMatrix,
    /// (patch index, R_a) for the centre, edge-left and edge-right patches.
    pub local: [(usize, &'a CovarianceMatrix); 3],
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub q: usize,
    pub rmed: CovarianceMatrix,
    /// ‖R_med − R_med^(Q)‖_F / ‖R_med‖_F.
    pub global_closure: f64,
    /// ‖R_c − (R0 + R_med^(Q))‖_F / ‖R_c‖_F.
    pub rc_closure: f64,
    /// Centre, edge-left, edge-right.
    pub local_closure: [f64; 3],
}

pub fn truncated_reconstruction(modal: &ModalSet, q: usize, targets: &ClosureTargets<'_>) -> Result<Truncation> {
    let partial = modal.rmed(q)?;
    let global_closure = guarded_relative_error(&partial, targets.rmed.entries())?;
    let rc_closure = guarded_relative_error(&(targets.r0.entries() + &partial), targets.rc.entries())?;
    let mut local_closure = [0.0; 3];
    for (slot, (patch, ra)) in local_closure.iter_mut().zip(targets.local.iter()) {
        *slot = guarded_relative_error(&modal.local(*patch, q)?, ra.entries())?;
    }
    Ok(Truncation {
        q,
        rmed: CovarianceMatrix::new(partial, CovLabel::Rmed)?,
        global_closure,
        rc_closure,
        local_closure,
    })
}

/// Cumulative KL energy fractions λ_1/Σλ, …, 1.
pub fn kl_energy_curve(kl: &KLBasis) -> Result<Vec<f64>> {
    let total: f64 = kl.eigenvalues().iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedMetric("KL energy of a zero spectrum"));
    }
    let mut acc = 0.0;
    Ok(kl
        .eigenvalues()
        .iter()
        .map(|l| {
            acc += l;
            (acc / total).min(1.0)
        })
        .collect())
}

/// Number of leading modes needed for `fraction` of the KL energy.
pub fn modes_for_energy(kl: &KLBasis, fraction: f64) -> Result<usize> {
    let curve = kl_energy_curve(kl)?;
    Ok(curve.iter().position(|f| *f >= fraction).map_or(curve.len(), |i| i + 1))
}

/// 1, 2, 4, … below `full`, then `full`.
pub fn q_sweep(full: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut q = 1;
    while q < full {
        out.push(q);
        q *= 2;
    }
    out.push(full);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosureRow {
    pub q: usize,
    pub global_closure: f64,
    pub local_closure_center: f64,
    pub local_closure_left: f64,
    pub local_closure_right: f64,
    pub r_eff_q: f64,
    pub kl_energy_q: f64,
    pub rc_closure: f64,
}

pub fn closure_curve(modal: &ModalSet, kl: &KLBasis, targets: &ClosureTargets<'_>) -> Result<Vec<ClosureRow>> {
    let energy = kl_energy_curve(kl)?;
    q_sweep(modal.order())
        .into_iter()
        .map(|q| {
            let t = truncated_reconstruction(modal, q, targets)?;
            Ok(ClosureRow {
                q,
                global_closure: t.global_closure,
                local_closure_center: t.local_closure[0],
                local_closure_left: t.local_closure[1],
                local_closure_right: t.local_closure[2],
                r_eff_q: effective_rank_of(t.rmed.entries())?,
                kl_energy_q: energy[q - 1],
                rc_closure: t.rc_closure,
            })
        })
        .collect()
}

pub const CLOSURE_COLUMNS: [&str; 7] = [
    "Q",
    "global_closure",
    "local_closure_center",
    "local_closure_left",
    "local_closure_right",
    "r_eff_Q",
    "kl_energy_Q",
];

pub fn write_closure_csv<W: Write>(rows: &[ClosureRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CLOSURE_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.q.to_string(),
            format!("{:e}", r.global_closure),
            format!("{:e}", r.local_closure_center),
            format!("{:e}", r.local_closure_left),
            format!("{:e}", r.local_closure_right),
            r.r_eff_q.to_string(),
            r.kl_energy_q.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{local_steering_covariance, medium_covariance, nominal_covariance, total_covariance};
    use crate::dielectric::{BumpSpec, NominalSpectrum};
    use crate::linalg::relative_error;
    use crate::propagation::{nominal_steering, steering_kernel, ArrayGeometry, FrequencyPlan, MediumChannels};
    use crate::relaxation_field::{build_kernel_matrix, kl_decompose, KernelMatrix, LogTauGrid, MaternParams};
    use crate::spectral::{effective_rank, kl_effective_rank_med};

    struct Fixture {
        field: KernelMatrix,
        scene: SceneGrid,
        kernels: Vec<SteeringKernel>,
        a0: Vec<CVector>,
    }

    fn fixture(points: usize) -> Fixture {
        let grid = LogTauGrid::from_tau_range(1e-10, 1e-7, points).unwrap();
        let field = build_kernel_matrix(&grid, &MaternParams::new(0.03, 1.5, 1.0).unwrap()).unwrap();
        let spectrum = NominalSpectrum::gaussian_bump(&grid, &BumpSpec::default()).unwrap();
        let plan = FrequencyPlan::linear(1e9, 2e6, 6).unwrap();
        let medium = MediumChannels::new(&plan, &spectrum, &grid).unwrap();
        let geometry = ArrayGeometry::uniform_in_medium(6, 1e9, medium.eps_bar[0], 0.5).unwrap();
        let scene = SceneGrid::polar((-0.5, 0.5), 3, (0.1, 0.4), 3, 1.0, &[1.0; 6]).unwrap();
        let kernels = scene.patches().iter().map(|p| steering_kernel(&geometry, &medium, p).unwrap()).collect();
        let a0 = scene.patches().iter().map(|p| nominal_steering(&geometry, &medium, p).unwrap()).collect();
        Fixture {
            field,
            scene,
            kernels,
            a0,
        }
    }

    #[test]
    fn propagate_mode_is_linear() {
        let f = fixture(32);
        let zero = DVector::zeros(32);
        assert!(propagate_mode(&f.kernels[0], &zero).unwrap().iter().all(|v| v.norm() == 0.0));
        let a = DVector::from_fn(32, |i, _| (i as f64).sin());
        let b = DVector::from_fn(32, |i, _| (i as f64 * 0.3).cos());
        let lhs = propagate_mode(&f.kernels[1], &(&a * 2.0 - &b)).unwrap();
        let rhs = propagate_mode(&f.kernels[1], &a).unwrap() * Complex64::new(2.0, 0.0) - propagate_mode(&f.kernels[1], &b).unwrap();
        assert!((lhs - &rhs).norm() <= 1e-14 * rhs.norm());
    }

    #[test]
    fn weights_applied_once_closure() {
        // E carries w, φ is w-orthonormal: Σ λ h h^H must equal E K E^H
        let f = fixture(48);
        let kl = kl_decompose(&f.field).unwrap();
        let modal = ModalSet::build(&kl, &f.kernels, &f.scene, kl.len()).unwrap();
        for (p, k) in f.kernels.iter().enumerate() {
            let ra = local_steering_covariance(k, &f.field).unwrap();
            let recon = modal.local(p, kl.len()).unwrap();
            assert!(relative_error(&recon, ra.entries()).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn modal_component_examples() {
        let f = fixture(16);
        let kl = kl_decompose(&f.field).unwrap();
        let modal = ModalSet::build(&kl, &f.kernels, &f.scene, 4).unwrap();
        let s = &modal.components()[0];
        let expected: f64 = (0..f.scene.len())
            .map(|p| f.scene.scattering_weight(p) * modal.modes(p)[0].norm_squared())
            .sum();
        assert!((crate::linalg::trace(s).re - expected).abs() <= 1e-12 * expected);

        let single = SceneGrid::new(vec![f.scene.patches()[0].clone()], vec![1.0]).unwrap();
        let sq = modal_component(&single, &modal.modes(0)[..1]).unwrap();
        let (vals, _) = crate::linalg::hermitian_eigen(&sq);
        assert!(vals[1].abs() <= 1e-14 * vals[0]);

        let silent: Vec<_> = f
            .scene
            .patches()
            .iter()
            .map(|p| crate::propagation::ScenePatch::new(p.theta, p.r, 0.0, p.gains.clone()).unwrap())
            .collect();
        let silent = SceneGrid::new(silent, f.scene.weights().to_vec()).unwrap();
        let hq: Vec<CVector> = (0..f.scene.len()).map(|p| modal.modes(p)[0].clone()).collect();
        assert!(modal_component(&silent, &hq).unwrap().iter().all(|v| v.norm() == 0.0));

        assert!(matches!(ModalSet::build(&kl, &f.kernels, &f.scene, 0), Err(Error::InvalidTruncation { .. })));
        assert!(matches!(modal.rmed(5), Err(Error::InvalidTruncation { .. })));
    }

    #[test]
    fn closure_curve_behaviour() {
        let f = fixture(64);
        let kl = kl_decompose(&f.field).unwrap();
        let modal = ModalSet::build(&kl, &f.kernels, &f.scene, kl.len()).unwrap();
        let locals: Vec<_> = f.kernels.iter().map(|k| local_steering_covariance(k, &f.field).unwrap()).collect();
        let r0 = nominal_covariance(&f.scene, &f.a0).unwrap();
        let rmed = medium_covariance(&f.scene, &locals).unwrap();
        let rc = total_covariance(&r0, &rmed).unwrap();
        let targets = ClosureTargets {
            r0: &r0,
            rmed: &rmed,
            rc: &rc,
            local: [
                (f.scene.center(), &locals[f.scene.center()]),
                (f.scene.edge_left(), &locals[f.scene.edge_left()]),
                (f.scene.edge_right(), &locals[f.scene.edge_right()]),
            ],
        };
        let rows = closure_curve(&modal, &kl, &targets).unwrap();
        assert_eq!(rows.iter().map(|r| r.q).collect::<Vec<_>>(), vec![1, 2, 4, 8, 16, 32, 64]);
        let last = rows.last().unwrap();
        assert!(last.global_closure <= 1e-12 && last.rc_closure <= 1e-12);
        assert!(last.local_closure_center <= 1e-12 && last.local_closure_left <= 1e-12 && last.local_closure_right <= 1e-12);
        assert!((last.r_eff_q - effective_rank(&rmed).unwrap()).abs() <= 1e-8);
        assert!((last.kl_energy_q - 1.0).abs() < 1e-12);
        for w in rows.windows(2) {
            assert!(w[1].global_closure <= w[0].global_closure + 64.0 * f64::EPSILON);
        }

        let kl_reff = kl_effective_rank_med(modal.lambdas(), modal.components()).unwrap();
        let direct = effective_rank(&rmed).unwrap();
        assert!((kl_reff - direct).abs() <= 1e-10 * direct);

        let mut buf = Vec::new();
        write_closure_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("Q,global_closure,local_closure_center,local_closure_left,local_closure_right,r_eff_Q,kl_energy_Q\n"));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }

    #[test]
    fn rank_one_kernel_closes_at_q1() {
        let f = fixture(16);
        let v = DVector::from_fn(16, |i, _| 0.02 * (1.0 + i as f64 * 0.1));
        let k = KernelMatrix::from_entries(&v * v.transpose(), f.field.grid().clone()).unwrap();
        let kl = kl_decompose(&k).unwrap();
        let modal = ModalSet::build(&kl, &f.kernels, &f.scene, 1).unwrap();
        let locals: Vec<_> = f.kernels.iter().map(|kk| local_steering_covariance(kk, &k).unwrap()).collect();
        let rmed = medium_covariance(&f.scene, &locals).unwrap();
        assert!(relative_error(&modal.rmed(1).unwrap(), rmed.entries()).unwrap() <= 1e-12);
    }

    #[test]
    fn energy_curve_examples() {
        let grid = LogTauGrid::trapezoid(0.0, 3.0, 4).unwrap();
        let flat = nalgebra::DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 / grid.weights()[i] } else { 0.0 });
        let kl = kl_decompose(&KernelMatrix::from_entries(flat, grid.clone()).unwrap()).unwrap();
        let curve = kl_energy_curve(&kl).unwrap();
        for (i, v) in curve.iter().enumerate() {
            assert!((v - (i + 1) as f64 / 4.0).abs() < 1e-12);
        }
        let v = DVector::from_vec(vec![1.0, 0.5, 0.2, 0.1]);
        let kl = kl_decompose(&KernelMatrix::from_entries(&v * v.transpose(), grid).unwrap()).unwrap();
        assert!((kl_energy_curve(&kl).unwrap()[0] - 1.0).abs() < 1e-12);
        assert_eq!(q_sweep(128), vec![1, 2, 4, 8, 16, 32, 64, 128]);
        assert_eq!(q_sweep(100), vec![1, 2, 4, 8, 16, 32, 64, 100]);
    }
}
