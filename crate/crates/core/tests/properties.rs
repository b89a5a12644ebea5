use gpr_clutter::config::ExperimentConfig;
use gpr_clutter::covariance::{read_csv, write_csv, CovLabel, CovarianceMatrix};
use gpr_clutter::linalg::{hermitian_residual, CMatrix, CVector};
use gpr_clutter::relaxation_field::{matern_kernel, MaternParams};
use gpr_clutter::spectral::{
    bound_check, effective_rank, effective_rank_from_parts, effective_rank_of, effective_subspace_dim, separability,
    EigenSpectrum,
};
use num_complex::Complex64;
use proptest::prelude::*;

/// A·A^H with `rank` columns drawn from `vals`.
fn psd(m: usize, rank: usize, vals: &[f64]) -> CMatrix {
    let a = CMatrix::from_fn(m, rank, |i, j| {
        let k = 2 * (i * rank + j);
        Complex64::new(vals[k % vals.len()], vals[(k + 1) % vals.len()])
    });
    &a * a.adjoint()
}

fn psd_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2usize..=8).prop_flat_map(|m| (Just(m), 1..=m, prop::collection::vec(-3.0f64..3.0, 2 * m * m)))
}

fn cov(m: CMatrix) -> CovarianceMatrix {
    CovarianceMatrix::new(m, CovLabel::Sample).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matern_even_and_non_increasing(
        nu in prop::sample::select(vec![0.5, 1.5, 2.5]),
        sigma in 0.01f64..2.0,
        ell in 0.1f64..5.0,
        h in 0.0f64..10.0,
        dh in 0.0f64..2.0,
    ) {
        let p = MaternParams::new(sigma, nu, ell).unwrap();
        let k = matern_kernel(h, &p).unwrap();
        prop_assert_eq!(k, matern_kernel(-h, &p).unwrap());
        prop_assert!(matern_kernel(h + dh, &p).unwrap() <= k);
        prop_assert!(k <= sigma * sigma * (1.0 + 1e-15));
    }

    #[test]
    fn effective_rank_between_one_and_rank((m, rank, vals) in psd_strategy()) {
        let r = psd(m, rank, &vals);
        prop_assume!(r.norm() > 1e-6);
        let e = effective_rank_of(&r).unwrap();
        prop_assert!(e >= 1.0 - 1e-9 && e <= rank as f64 + 1e-9, "r_eff {} rank {}", e, rank);
    }

    #[test]
    fn spectral_metrics_scale_invariant(
        (m, rank, vals) in psd_strategy(),
        scale in 1e-3f64..1e3,
        tscale in 1e-2f64..1e2,
        rho in prop::sample::select(vec![0.8, 0.9, 0.95]),
    ) {
        let r = psd(m, rank, &vals);
        prop_assume!(r.norm() > 1e-6);
        let scaled = &r * Complex64::new(scale, 0.0);
        let e = effective_rank_of(&r).unwrap();
        prop_assert!((effective_rank_of(&scaled).unwrap() - e).abs() <= 1e-10 * e);

        let s1 = EigenSpectrum::of(&r);
        let s2 = EigenSpectrum::of(&scaled);
        let p = effective_subspace_dim(&s1, rho).unwrap();
        // a cumulative fraction sitting exactly on rho may round either way
        let fr = s1.cumulative_fractions().unwrap();
        prop_assume!(fr.iter().all(|f| (f - rho).abs() > 1e-9));
        prop_assert_eq!(p, effective_subspace_dim(&s2, rho).unwrap());

        let t = CVector::from_fn(m, |i, _| Complex64::new(vals[i % vals.len()], 1.0 - vals[(i + 3) % vals.len()]));
        let g1 = separability(&s1, p, &t).unwrap();
        let g2 = separability(&s2, p, &(&t * Complex64::new(0.0, tscale))).unwrap();
        prop_assert!((g1.gamma - g2.gamma).abs() <= 1e-9);
        prop_assert!((g1.eta - g2.eta).abs() <= 1e-9);
    }

    #[test]
    fn gamma_non_decreasing_in_p((m, rank, vals) in psd_strategy()) {
        let r = psd(m, rank, &vals);
        let s = EigenSpectrum::of(&r);
        let t = CVector::from_fn(m, |i, _| Complex64::new(1.0 + vals[i % vals.len()], vals[(i + 1) % vals.len()]));
        let mut prev = (0.0, 1.0);
        for p in 1..=m {
            let rep = separability(&s, p, &t).unwrap();
            prop_assert!(rep.gamma >= prev.0 - 1e-12 && rep.eta <= prev.1 + 1e-12);
            prop_assert!((rep.gamma + rep.eta - 1.0).abs() <= 1e-12);
            prev = (rep.gamma, rep.eta);
        }
    }

    #[test]
    fn bound_holds((m, rank, vals) in psd_strategy(), rho in 0.05f64..0.999) {
        let r = psd(m, rank, &vals);
        prop_assume!(r.norm() > 1e-6);
        let b = bound_check(&EigenSpectrum::of(&r), rho).unwrap();
        prop_assert!(b.holds, "p {} r_eff {} rho {}", b.p_rho, b.r_eff, rho);
    }

    #[test]
    fn two_part_effective_rank_matches_direct(
        (m, rank, vals) in psd_strategy(),
        k in 1usize..=3,
        shift in 0usize..50,
    ) {
        let r0 = psd(m, rank, &vals);
        let rot: Vec<f64> = vals.iter().cycle().skip(shift).take(vals.len()).copied().collect();
        let rmed = psd(m, k.min(m), &rot);
        prop_assume!(r0.norm() > 1e-6 && rmed.norm() > 1e-6);
        let (a, b) = (cov(r0.clone()), cov(rmed.clone()));
        let direct = effective_rank(&cov(&r0 + &rmed)).unwrap();
        let parts = effective_rank_from_parts(&a, &b).unwrap();
        prop_assert!((direct - parts).abs() <= 1e-12 * direct);
    }

    #[test]
    fn construction_symmetrizes(vals in prop::collection::vec(-5.0f64..5.0, 2 * 36)) {
        let raw = CMatrix::from_fn(6, 6, |i, j| Complex64::new(vals[2 * (6 * i + j)], vals[2 * (6 * i + j) + 1]));
        let c = CovarianceMatrix::new(raw.clone(), CovLabel::Sample).unwrap();
        prop_assert_eq!(hermitian_residual(c.entries()), 0.0);
        prop_assert_eq!(c.hermitian_residual(), hermitian_residual(&raw));
    }

    #[test]
    fn covariance_csv_round_trip((m, rank, vals) in psd_strategy()) {
        let c = CovarianceMatrix::new(psd(m, rank, &vals), CovLabel::Rmed).unwrap();
        let mut buf = Vec::new();
        write_csv(&c, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.label(), CovLabel::Rmed);
        prop_assert_eq!(back.entries(), c.entries());
    }

    #[test]
    fn config_echo_round_trip(
        seed in 0..=i64::MAX as u64,
        sigma in 0.0f64..0.2,
        nu in prop::sample::select(vec!["0.5", "1.5", "2.5"]),
        n_mc in 2usize..100_000,
    ) {
        let overrides = vec![
            format!("mc.seed={seed}"),
            format!("field.sigma_g={sigma:e}"),
            format!("field.nu={nu}"),
            format!("mc.n_mc={n_mc}"),
        ];
        let c = ExperimentConfig::from_toml_str("", &overrides).unwrap();
        prop_assert_eq!(c.mc.seed, seed);
        let again = ExperimentConfig::from_toml_str(&c.echo().unwrap(), &[]).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.hash().unwrap(), c.hash().unwrap());
    }
}
