//! Stage A–E validation: theoretical quantities from the first-order chain
//! against Monte Carlo estimates from seeded field draws, plus the modal
//! closure run.
//!
//! Realization `i` always comes from stream `(seed, i)`, so a run with n
//! draws is a prefix of any longer run with the same seed.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::covariance::{
    local_steering_covariance, medium_covariance, nominal_covariance, total_covariance, CovLabel, CovarianceMatrix,
    SceneGrid,
};
use crate::dielectric::covariance_from_debye;
use crate::linalg::{guarded_relative_error, CMatrix, CVector};
use crate::modal::{closure_curve, kl_energy_curve, modes_for_energy, ClosureRow, ClosureTargets, ModalSet};
use crate::propagation::{nominal_steering, steering_kernel, MediumChannels, SteeringKernel};
use crate::relaxation_field::{build_kernel_matrix, kl_decompose, FieldSampler, KernelMatrix, RealizationStream};
use crate::report::{Bound, Metric, MetricKind, Provenance, Stage, StageReport};
use crate::spectral::{
    alignment_mu, bound_check, effective_subspace_dim, kl_effective_rank_med, separability, EigenSpectrum,
};
use crate::{Error, Result};

/// Seed-independent quantities of one configuration.
#[derive(Debug, Clone)]
pub struct Theory {
    pub field: KernelMatrix,
    pub medium: MediumChannels,
    pub scene: SceneGrid,
    pub kernels: Vec<SteeringKernel>,
    pub a0: Vec<CVector>,
    pub local: Vec<CovarianceMatrix>,
    pub r0: CovarianceMatrix,
    pub rmed: CovarianceMatrix,
    pub rc: CovarianceMatrix,
    /// Cov(δε(ω_m), δε(ω_n)).
    pub c_eps: CMatrix,
    /// First-order Cov(δk_m, δk_n) = s_m C_ε s_n*.
    pub c_k: CMatrix,
    pub target: usize,
}

impl Theory {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let field = build_kernel_matrix(&grid, &config.field.matern()?)?;
        let spectrum = config.spectrum(&grid)?;
        let medium = config.medium_channels(&spectrum, &grid)?;
        let geometry = config.geometry(&spectrum, &grid)?;
        if geometry.channels() != medium.channels() {
            return Err(Error::DimensionMismatch {
                left: medium.channels(),
                right: geometry.channels(),
            });
        }
        let scene = config.scene_grid()?;
        let kernels = scene
            .patches()
            .iter()
            .map(|p| steering_kernel(&geometry, &medium, p))
            .collect::<Result<Vec<_>>>()?;
        let a0 = scene
            .patches()
            .iter()
            .map(|p| nominal_steering(&geometry, &medium, p))
            .collect::<Result<Vec<_>>>()?;
        let local = kernels
            .par_iter()
            .map(|k| local_steering_covariance(k, &field))
            .collect::<Result<Vec<_>>>()?;
        let r0 = nominal_covariance(&scene, &a0)?;
        let rmed = medium_covariance(&scene, &local)?;
        let rc = total_covariance(&r0, &rmed)?;
        let c_eps = covariance_from_debye(&medium.debye, &field);
        let s = CMatrix::from_diagonal(&CVector::from_vec(medium.sensitivity.clone()));
        let c_k = &s * &c_eps * s.adjoint();
        let target = config.target_index(&scene);
        Ok(Self {
            field,
            medium,
            scene,
            kernels,
            a0,
            local,
            r0,
            rmed,
            rc,
            c_eps,
            c_k,
            target,
        })
    }

    pub fn channels(&self) -> usize {
        self.medium.channels()
    }
}

/// Everything derived from one field draw.
#[derive(Debug, Clone)]
pub struct Realization {
    pub delta_eps: CVector,
    pub delta_k: CVector,
    pub delta_k_linear: CVector,
    pub branch_switches: usize,
    /// Per patch: exact δa and first-order δa¹.
    pub exact: Vec<CVector>,
    pub first_order: Vec<CVector>,
}

/// Draw and propagate `count` realizations in parallel; the result is
/// ordered by realization index and independent of the thread count.
pub fn draw_realizations(theory: &Theory, seed: u64, count: usize) -> Result<Vec<Realization>> {
    if count < 2 {
        return Err(Error::InsufficientSamples { required: 2, found: count });
    }
    let sampler = FieldSampler::new(&theory.field)?;
    (0..count as u64)
        .into_par_iter()
        .map(|index| {
            let draw = sampler.sample(RealizationStream { seed, index });
            let delta_eps = theory.medium.delta_eps(&draw.values)?;
            let dk = theory.medium.delta_k_exact(&delta_eps)?;
            let delta_k_linear = theory.medium.delta_k_linear(&delta_eps);
            let exact = theory.kernels.iter().map(|k| k.exact_from_delta_k(&dk.delta_k)).collect();
            let first_order = theory
                .kernels
                .iter()
                .map(|k| k.apply(&draw.values))
                .collect::<Result<Vec<_>>>()?;
            Ok(Realization {
                delta_eps,
                delta_k: dk.delta_k,
                delta_k_linear,
                branch_switches: dk.branch_switches,
                exact,
                first_order,
            })
        })
        .collect()
}

fn outer_mean<'a>(dim: usize, vectors: impl Iterator<Item = &'a CVector>, n: usize) -> CMatrix {
    let mut acc = CMatrix::zeros(dim, dim);
    let one = Complex64::new(1.0, 0.0);
    for v in vectors {
        acc.gerc(one, v, v, one);
    }
    acc / Complex64::new(n as f64, 0.0)
}

/// ‖a − b‖ / ‖a‖ with 0/0 = 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Monte Carlo estimates from the first `n` realizations.
#[derive(Debug, Clone)]
pub struct McEstimates {
    pub n: usize,
    pub c_eps: CMatrix,
    pub c_k: CMatrix,
    pub wavenumber_linearization_rms: f64,
    pub branch_switches: usize,
    pub local: Vec<CovarianceMatrix>,
    /// Per patch RMS of ‖δa − δa¹‖/‖δa‖.
    pub steering_linearization_rms: Vec<f64>,
    pub rmed: CovarianceMatrix,
    pub rc: CovarianceMatrix,
}

impl McEstimates {
    pub fn new(theory: &Theory, draws: &[Realization], n: usize) -> Result<Self> {
        if n < 2 || n > draws.len() {
            return Err(Error::InsufficientSamples {
                required: n.max(2),
                found: draws.len(),
            });
        }
        let draws = &draws[..n];
        let m = theory.channels();
        let c_eps = outer_mean(m, draws.iter().map(|r| &r.delta_eps), n);
        let c_k = outer_mean(m, draws.iter().map(|r| &r.delta_k), n);

        let mut sq = 0.0;
        for r in draws {
            for (dk, dl) in r.delta_k.iter().zip(r.delta_k_linear.iter()) {
                sq += ratio((dk - dl).norm(), dk.norm()).powi(2);
            }
        }
        let wavenumber_linearization_rms = (sq / (n * m) as f64).sqrt();
        let branch_switches = draws.iter().map(|r| r.branch_switches).sum();

        let patches = theory.scene.len();
        let per_patch: Vec<(CovarianceMatrix, f64, CMatrix, CMatrix)> = (0..patches)
            .into_par_iter()
            .map(|p| {
                let local = CovarianceMatrix::new(outer_mean(m, draws.iter().map(|r| &r.first_order[p]), n), CovLabel::Sample)?;
                let rms = (draws
                    .iter()
                    .map(|r| ratio((&r.exact[p] - &r.first_order[p]).norm(), r.exact[p].norm()).powi(2))
                    .sum::<f64>()
                    / n as f64)
                    .sqrt();
                let exact_cov = outer_mean(m, draws.iter().map(|r| &r.exact[p]), n);
                // control variate: E[a a^H] − E[a¹ a¹^H] on the same draws
                let one = Complex64::new(1.0, 0.0);
                let mut cv = CMatrix::zeros(m, m);
                let a0 = &theory.a0[p];
                for r in draws {
                    let a = a0 + &r.exact[p];
                    let a1 = a0 + &r.first_order[p];
                    cv.gerc(one, &a, &a, one);
                    cv.gerc(-one, &a1, &a1, one);
                }
                cv /= Complex64::new(n as f64, 0.0);
                Ok((local, rms, exact_cov, cv))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut rmed = CMatrix::zeros(m, m);
        let mut cv = CMatrix::zeros(m, m);
        let mut local = Vec::with_capacity(patches);
        let mut steering_linearization_rms = Vec::with_capacity(patches);
        for (p, (l, rms, exact_cov, cv_p)) in per_patch.into_iter().enumerate() {
            let w = Complex64::new(theory.scene.scattering_weight(p), 0.0);
            rmed += exact_cov * w;
            cv += cv_p * w;
            local.push(l);
            steering_linearization_rms.push(rms);
        }
        Ok(Self {
            n,
            c_eps,
            c_k,
            wavenumber_linearization_rms,
            branch_switches,
            local,
            steering_linearization_rms,
            rmed: CovarianceMatrix::new(rmed, CovLabel::Rmed)?,
            rc: CovarianceMatrix::new(theory.rc.entries() + cv, CovLabel::Rc)?,
        })
    }

    pub fn max_steering_linearization_rms(&self) -> f64 {
        self.steering_linearization_rms.iter().copied().fold(0.0, f64::max)
    }
}

/// Stage E quantities for one covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub r_eff: f64,
    pub p_rho: usize,
    pub gamma: f64,
    pub eta: f64,
    pub bound_slack: f64,
    pub mu: Option<f64>,
}

pub fn spectral_summary(rc: &CovarianceMatrix, r0: &CovarianceMatrix, target: &CVector, rho: f64) -> Result<SpectralSummary> {
    let spectrum = EigenSpectrum::new(rc);
    let bound = bound_check(&spectrum, rho)?;
    let p_rho = effective_subspace_dim(&spectrum, rho)?;
    let sep = separability(&spectrum, p_rho, target)?;
    let rmed = CovarianceMatrix::new(rc.entries() - r0.entries(), CovLabel::Rmed)?;
    let mu = if rmed.is_zero() || r0.is_zero() {
        None
    } else {
        Some(alignment_mu(r0, &rmed)?)
    };
    Ok(SpectralSummary {
        r_eff: crate::spectral::effective_rank(rc)?,
        p_rho,
        gamma: sep.gamma,
        eta: sep.eta,
        bound_slack: bound.slack,
        mu,
    })
}

struct Scorer<'a> {
    config: &'a ExperimentConfig,
    provenance: Provenance,
}

impl Scorer<'_> {
    fn max(&self, name: &str, value: f64, limit: f64) -> Metric {
        Metric::new(name, value, Bound::Max(limit), MetricKind::Error).with_near_flag(self.config.thresholds.near_threshold_slack)
    }

    fn stage(&self, stage: Stage) -> StageReport {
        StageReport::new(stage, self.provenance.clone())
    }
}

/// Hash, seed and sample count of a resolved config.
pub fn provenance(config: &ExperimentConfig) -> Result<Provenance> {
    Ok(Provenance {
        config_hash: config.hash()?,
        seed: config.mc.seed,
        n_mc: config.mc.n_mc,
    })
}

/// Score theory against the Monte Carlo estimates for Stages A–E.
pub fn score_stages(config: &ExperimentConfig, theory: &Theory, mc: &McEstimates) -> Result<Vec<StageReport>> {
    let t = &config.thresholds;
    let sc = Scorer {
        config,
        provenance: provenance(config)?,
    };
    let mut reports = Vec::new();
    let staged = |stage: Stage, reports: &Vec<StageReport>, e: Error| Error::Stage {
        stage,
        partial: reports.clone(),
        source: Box::new(e),
    };

    let mut a = sc.stage(Stage::A);
    let err = guarded_relative_error(&mc.c_eps, &theory.c_eps).map_err(|e| staged(Stage::A, &reports, e))?;
    a.push(sc.max("permittivity_covariance_error", err, t.permittivity_covariance));
    reports.push(a);

    let mut b = sc.stage(Stage::B);
    let err = guarded_relative_error(&mc.c_k, &theory.c_k).map_err(|e| staged(Stage::B, &reports, e))?;
    b.push(sc.max("wavenumber_covariance_error", err, t.wavenumber_covariance));
    b.push(sc.max("wavenumber_linearization_rms", mc.wavenumber_linearization_rms, t.wavenumber_linearization));
    b.push(Metric::new("branch_switches", mc.branch_switches as f64, Bound::Max(0.0), MetricKind::Count));
    reports.push(b);

    let mut c = sc.stage(Stage::C);
    let mut worst_local: f64 = 0.0;
    for (est, truth) in mc.local.iter().zip(&theory.local) {
        let e = guarded_relative_error(est.entries(), truth.entries()).map_err(|e| staged(Stage::C, &reports, e))?;
        worst_local = worst_local.max(e);
    }
    c.push(sc.max("max_local_covariance_error", worst_local, t.local_covariance));
    c.push(sc.max("max_steering_linearization_rms", mc.max_steering_linearization_rms(), t.steering_linearization));
    let worst_patch = mc
        .steering_linearization_rms
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc })
        .0;
    c.push(Metric::info("worst_linearization_patch", worst_patch as f64, MetricKind::Count));
    reports.push(c);

    let mut d = sc.stage(Stage::D);
    let rmed_err = guarded_relative_error(mc.rmed.entries(), theory.rmed.entries()).map_err(|e| staged(Stage::D, &reports, e))?;
    let rc_err = guarded_relative_error(mc.rc.entries(), theory.rc.entries()).map_err(|e| staged(Stage::D, &reports, e))?;
    d.push(sc.max("rmed_error", rmed_err, t.rmed));
    d.push(sc.max("rc_error", rc_err, t.rc));
    let all: Vec<&CovarianceMatrix> = theory
        .local
        .iter()
        .chain([&theory.r0, &theory.rmed, &theory.rc])
        .chain(mc.local.iter())
        .chain([&mc.rmed, &mc.rc])
        .collect();
    let residual = all.iter().map(|c| c.scaled_residual()).fold(0.0, f64::max);
    let min_eig = all.iter().map(|c| c.scaled_min_eigenvalue()).fold(f64::INFINITY, f64::min);
    d.push(Metric::new("max_hermitian_residual", residual, Bound::Max(t.hermitian_residual), MetricKind::Error));
    d.push(Metric::new("min_eigenvalue", min_eig, Bound::Min(t.min_eigenvalue), MetricKind::Error));
    reports.push(d);

    let target = &theory.a0[theory.target];
    let th = spectral_summary(&theory.rc, &theory.r0, target, config.rho).map_err(|e| staged(Stage::E, &reports, e))?;
    let mcs = spectral_summary(&mc.rc, &theory.r0, target, config.rho).map_err(|e| staged(Stage::E, &reports, e))?;
    reports.push(stage_e(&sc, &th, &mcs));
    Ok(reports)
}

fn stage_e(sc: &Scorer<'_>, th: &SpectralSummary, mc: &SpectralSummary) -> StageReport {
    let t = &sc.config.thresholds;
    let mut e = sc.stage(Stage::E);
    let spectral = |name: &str, v: f64| Metric::info(name, v, MetricKind::Spectral);
    e.push(spectral("r_eff_theory", th.r_eff));
    e.push(spectral("r_eff_mc", mc.r_eff));
    e.push(Metric::new("r_eff_gap", (th.r_eff - mc.r_eff).abs(), Bound::Max(t.r_eff_gap), MetricKind::Spectral).with_near_flag(t.near_threshold_slack));
    e.push(Metric::info("p_rho_theory", th.p_rho as f64, MetricKind::Count));
    e.push(Metric::info("p_rho_mc", mc.p_rho as f64, MetricKind::Count));
    e.push(Metric::new("p_rho_gap", (th.p_rho as f64 - mc.p_rho as f64).abs(), Bound::Max(t.p_rho_gap), MetricKind::Count));
    e.push(spectral("eta_theory", th.eta));
    e.push(spectral("eta_mc", mc.eta));
    e.push(Metric::new("eta_gap", (th.eta - mc.eta).abs(), Bound::Max(t.eta_gap), MetricKind::Spectral).with_near_flag(t.near_threshold_slack));
    e.push(spectral("gamma_theory", th.gamma));
    e.push(spectral("gamma_mc", mc.gamma));
    if let Some(mu) = th.mu {
        e.push(spectral("mu_theory", mu));
    }
    if let Some(mu) = mc.mu {
        e.push(spectral("mu_mc", mu));
    }
    e.push(Metric::new("bound_slack_theory", th.bound_slack, Bound::Min(0.0), MetricKind::Spectral));
    e.push(Metric::new("bound_slack_mc", mc.bound_slack, Bound::Min(0.0), MetricKind::Spectral));
    e
}

/// Everything a baseline run produced, kept for scans and diagnostics.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub theory: Theory,
    pub draws: Vec<Realization>,
    pub reports: Vec<StageReport>,
}

/// Stages A–E for the configured n_mc and seed.
pub fn run_baseline(config: &ExperimentConfig) -> Result<Vec<StageReport>> {
    Ok(run_baseline_full(config)?.reports)
}

pub fn run_baseline_full(config: &ExperimentConfig) -> Result<BaselineRun> {
    let theory = Theory::new(config).map_err(|e| Error::Stage {
        stage: Stage::A,
        partial: Vec::new(),
        source: Box::new(e),
    })?;
    let draws = draw_realizations(&theory, config.mc.seed, config.mc.n_mc).map_err(|e| Error::Stage {
        stage: Stage::A,
        partial: Vec::new(),
        source: Box::new(e),
    })?;
    let mc = McEstimates::new(&theory, &draws, config.mc.n_mc)?;
    let reports = score_stages(config, &theory, &mc)?;
    Ok(BaselineRun { theory, draws, reports })
}

/// Modal closure results (Table VII analogue) and the closure curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalSummary {
    pub stage: StageReport,
    pub curve: Vec<ClosureRow>,
    pub kl_energy: Vec<f64>,
}

pub fn run_modal(config: &ExperimentConfig) -> Result<ModalSummary> {
    let wrap = |e: Error| Error::Stage {
        stage: Stage::Modal,
        partial: Vec::new(),
        source: Box::new(e),
    };
    let theory = Theory::new(config).map_err(wrap)?;
    let kl = kl_decompose(&theory.field).map_err(wrap)?;
    let order = config.modal.max_order.unwrap_or(kl.len());
    let modal = ModalSet::build(&kl, &theory.kernels, &theory.scene, order).map_err(wrap)?;
    let scene = &theory.scene;
    let targets = ClosureTargets {
        r0: &theory.r0,
        rmed: &theory.rmed,
        rc: &theory.rc,
        local: [
            (scene.center(), &theory.local[scene.center()]),
            (scene.edge_left(), &theory.local[scene.edge_left()]),
            (scene.edge_right(), &theory.local[scene.edge_right()]),
        ],
    };
    let curve = closure_curve(&modal, &kl, &targets).map_err(wrap)?;
    let kl_energy = kl_energy_curve(&kl).map_err(wrap)?;
    let t = &config.thresholds;
    let mut stage = StageReport::new(Stage::Modal, provenance(config)?);
    let last = curve.last().expect("sweep always has the full order");
    let full = order == kl.len();
    let closure_bound = |v: f64, name: &str| {
        if full {
            Metric::new(name, v, Bound::Max(t.closure), MetricKind::Error)
        } else {
            Metric::info(name, v, MetricKind::Error)
        }
    };
    stage.push(Metric::info("max_truncation_order", order as f64, MetricKind::Count));
    stage.push(closure_bound(last.rc_closure, "terminal_global_closure"));
    stage.push(closure_bound(last.global_closure, "global_frobenius_closure"));
    stage.push(closure_bound(last.local_closure_center, "local_closure_center"));
    stage.push(closure_bound(last.local_closure_left, "local_closure_edge_left"));
    stage.push(closure_bound(last.local_closure_right, "local_closure_edge_right"));

    // rounding can wiggle a converged curve by a few ulps
    let tol = 64.0 * f64::EPSILON;
    let worst_increase = curve
        .windows(2)
        .map(|w| w[1].global_closure - w[0].global_closure)
        .fold(0.0, f64::max);
    stage.push(Metric::new("closure_curve_max_increase", worst_increase, Bound::Max(tol), MetricKind::Error));

    let direct = crate::spectral::effective_rank(&theory.rmed);
    if let Ok(direct) = direct {
        let kl_form = kl_effective_rank_med(modal.lambdas(), modal.components()).map_err(wrap)?;
        let gap = (kl_form - direct).abs() / direct;
        stage.push(Metric::info("r_eff_med_direct", direct, MetricKind::Spectral));
        stage.push(Metric::info("r_eff_med_kl", kl_form, MetricKind::Spectral));
        stage.push(if full {
            Metric::new("kl_r_eff_relative_gap", gap, Bound::Max(t.kl_r_eff_gap), MetricKind::Error)
        } else {
            Metric::info("kl_r_eff_relative_gap", gap, MetricKind::Error)
        });
    }
    let q99 = modes_for_energy(&kl, 0.99).map_err(wrap)?;
    stage.push(Metric::info("kl_modes_for_99pct_energy", q99 as f64, MetricKind::Count));
    Ok(ModalSummary { stage, curve, kl_energy })
}
