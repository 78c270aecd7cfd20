use proptest::prelude::*;

use sketchls::criteria::{closed_form_criteria, oblique_projection, pe_exact, re_from_pe, wc_exact};
use sketchls::datagen::{design_from_leverage, gaussian_design, schur_horn_orthonormal};
use sketchls::leverage::{exact_leverage, mixture_probs};
use sketchls::linalg::{
    frobenius_norm, fwht, pseudo_inverse, spectral_norm, thin_svd, DenseMatrix, RankTolerance,
};
use sketchls::model::{default_beta, Dataset};
use sketchls::rng::{normal_matrix, seeded};
use sketchls::sketch::{Scheme, SketchSpec};

fn max_abs(m: &DenseMatrix) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn all_schemes() -> [Scheme; 5] {
    [
        Scheme::SamplingRescaled,
        Scheme::SamplingNorescale,
        Scheme::SubgaussianGaussian,
        Scheme::SubgaussianRademacher,
        Scheme::Hadamard,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_reconstructs_with_orthonormal_factors(seed in any::<u64>(), m in 1usize..24, k in 1usize..8) {
        let m = m.max(k);
        let a = normal_matrix(m, k, &mut seeded(seed));
        let svd = thin_svd(&a).unwrap();
        let norm = frobenius_norm(&a);
        prop_assert!(frobenius_norm(&(svd.reconstruct() - &a)) <= 1e-10 * norm.max(1.0));
        prop_assert!(max_abs(&(svd.u.transpose() * &svd.u - DenseMatrix::identity(k, k))) <= 1e-10);
        prop_assert!(max_abs(&(svd.v.transpose() * &svd.v - DenseMatrix::identity(k, k))) <= 1e-10);
        prop_assert!(svd.sigma.iter().all(|&s| s >= 0.0));
        prop_assert!(svd.sigma.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fwht_twice_scales_by_n(seed in any::<u64>(), log in 0u32..11) {
        let n = 1usize << log;
        let v: Vec<f64> = normal_matrix(n, 1, &mut seeded(seed)).iter().copied().collect();
        let mut w = v.clone();
        fwht(&mut w).unwrap();
        let energy: f64 = w.iter().map(|x| x * x).sum();
        let orig: f64 = v.iter().map(|x| x * x).sum();
        prop_assert!((energy - n as f64 * orig).abs() <= 1e-10 * (n as f64 * orig).max(1.0));
        fwht(&mut w).unwrap();
        for (a, b) in w.iter().zip(&v) {
            prop_assert!((a / n as f64 - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn moore_penrose_identities(seed in any::<u64>(), rows in 1usize..12, cols in 1usize..12, rank in 1usize..6) {
        let mut rng = seeded(seed);
        let rank = rank.min(rows).min(cols);
        let a = normal_matrix(rows, rank, &mut rng) * normal_matrix(rank, cols, &mut rng);
        let ap = pseudo_inverse(&a, RankTolerance::default()).unwrap();
        let scale = max_abs(&a).max(max_abs(&ap)).max(1.0);
        let aap = &a * &ap;
        let apa = &ap * &a;
        prop_assert!(max_abs(&(&aap * &a - &a)) <= 1e-9 * scale);
        prop_assert!(max_abs(&(&apa * &ap - &ap)) <= 1e-9 * scale);
        prop_assert!(max_abs(&(&aap - aap.transpose())) <= 1e-9 * scale);
        prop_assert!(max_abs(&(&apa - apa.transpose())) <= 1e-9 * scale);
    }

    #[test]
    fn norm_inequalities(seed in any::<u64>(), rows in 1usize..10, cols in 1usize..10) {
        let a = normal_matrix(rows, cols, &mut seeded(seed));
        let spec = spectral_norm(&a).unwrap();
        let frob = frobenius_norm(&a);
        let rank = rows.min(cols) as f64;
        prop_assert!(spec <= frob * (1.0 + 1e-12));
        prop_assert!(frob <= rank.sqrt() * spec * (1.0 + 1e-12));
    }

    #[test]
    fn criteria_invariant_to_sketch_scale(seed in any::<u64>(), which in 0usize..5) {
        let mut rng = seeded(seed);
        let (n, p, r) = (32, 3, 12);
        let x = gaussian_design(n, p, &mut rng).unwrap();
        let beta = default_beta(p);
        let d = Dataset::new(x.clone(), &x * &beta).unwrap();
        let lev = exact_leverage(&x).unwrap();
        let s = SketchSpec::new(all_schemes()[which], r, seed).build(n, Some(&lev)).unwrap();
        let base = closed_form_criteria(&d, &beta, &s).unwrap();
        for c in [0.5, 3.0] {
            let scaled = s.scaled(c);
            let op = oblique_projection(&d.svd().u, &scaled).unwrap();
            let wc = wc_exact(&op).unwrap();
            let pe = pe_exact(d.svd(), &beta, &op).unwrap().c_pe;
            let re = re_from_pe(pe, n, p).unwrap();
            if base.c_wc.is_finite() {
                prop_assert!((wc - base.c_wc).abs() <= 1e-9 * base.c_wc);
            } else {
                prop_assert!(wc.is_infinite());
            }
            prop_assert!((pe - base.c_pe).abs() <= 1e-9 * base.c_pe);
            prop_assert!((re - base.c_re).abs() <= 1e-9 * base.c_re);
        }
    }

    #[test]
    fn criteria_at_least_one_when_rank_preserved(seed in any::<u64>(), which in 0usize..5, r in 4usize..32) {
        let mut rng = seeded(seed);
        let (n, p) = (32, 3);
        let x = gaussian_design(n, p, &mut rng).unwrap();
        let beta = default_beta(p);
        let d = Dataset::new(x.clone(), &x * &beta).unwrap();
        let lev = exact_leverage(&x).unwrap();
        let s = SketchSpec::new(all_schemes()[which], r, seed).build(n, Some(&lev)).unwrap();
        let rep = closed_form_criteria(&d, &beta, &s).unwrap();
        prop_assert!(rep.c_pe >= 1.0 - 1e-9);
        prop_assert!(rep.c_re >= 1.0 - 1e-9);
        if rep.rank_ok {
            prop_assert!(rep.c_wc >= 1.0 - 1e-9);
            prop_assert!(rep.pe_bias.abs() <= 1e-9);
        } else {
            prop_assert!(rep.c_wc.is_infinite());
            prop_assert!(rep.c_pe.is_finite());
        }
    }

    #[test]
    fn oblique_projection_is_idempotent(seed in any::<u64>(), which in 0usize..5) {
        let mut rng = seeded(seed);
        let (n, p, r) = (16, 3, 8);
        let x = gaussian_design(n, p, &mut rng).unwrap();
        let lev = exact_leverage(&x).unwrap();
        let u = thin_svd(&x).unwrap().u;
        let s = SketchSpec::new(all_schemes()[which], r, seed).build(n, Some(&lev)).unwrap();
        let op = oblique_projection(&u, &s).unwrap();
        let pi = op.pi().unwrap();
        let scale = max_abs(&pi).max(1.0);
        prop_assert!(max_abs(&(&pi * &pi - &pi)) <= 1e-9 * scale * scale);
        prop_assert!((frobenius_norm(&pi).powi(2) - op.frobenius_sq()).abs() <= 1e-9 * op.frobenius_sq().max(1.0));
    }

    #[test]
    fn leverage_is_basis_invariant(seed in any::<u64>(), p in 1usize..6) {
        let mut rng = seeded(seed);
        let n = 20;
        let x = gaussian_design(n, p, &mut rng).unwrap();
        let a = normal_matrix(p, p, &mut rng) + DenseMatrix::identity(p, p) * 3.0;
        let l1 = exact_leverage(&x).unwrap();
        let l2 = exact_leverage(&(&x * a)).unwrap();
        for (s, t) in l1.scores.iter().zip(&l2.scores) {
            prop_assert!((s - t).abs() <= 1e-9);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(s));
        }
        prop_assert!((l1.sum() - p as f64).abs() <= 1e-9);
    }

    #[test]
    fn mixture_is_a_distribution(seed in any::<u64>(), theta in 0.0f64..0.999) {
        let mut rng = seeded(seed);
        let (n, p) = (24, 3);
        let x = gaussian_design(n, p, &mut rng).unwrap();
        let lev = exact_leverage(&x).unwrap();
        let q = vec![1.0 / n as f64; n];
        let probs = mixture_probs(&lev, p, theta, &q).unwrap();
        prop_assert!(probs.iter().all(|&v| v > 0.0));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let pure = mixture_probs(&lev, p, 0.0, &q).unwrap();
        for (pi, l) in pure.iter().zip(&lev.scores) {
            prop_assert!((pi - l / p as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn schur_horn_hits_feasible_targets(seed in any::<u64>(), n in 3usize..40, p_frac in 0.05f64..0.95) {
        let mut rng = seeded(seed);
        let p = ((n as f64 * p_frac).floor() as usize).clamp(1, n - 1);
        let raw: Vec<f64> = normal_matrix(n, 1, &mut rng).iter().map(|z| 0.05 + z.abs()).collect();
        let total: f64 = raw.iter().sum();
        let mut targets: Vec<f64> = raw.iter().map(|t| t * p as f64 / total).collect();
        // Cap at 1 and spread the excess over the rest until feasible.
        for _ in 0..100 {
            let excess: f64 = targets.iter().map(|t| (t - 1.0).max(0.0)).sum();
            if excess <= 0.0 {
                break;
            }
            let free = targets.iter().filter(|&&t| t < 1.0).count() as f64;
            for t in targets.iter_mut() {
                *t = if *t >= 1.0 { 1.0 } else { *t + excess / free };
            }
        }
        prop_assume!(targets.iter().all(|&t| t <= 1.0));
        let u = schur_horn_orthonormal(&targets, &mut rng).unwrap();
        prop_assert_eq!(u.shape(), (n, p));
        prop_assert!(max_abs(&(u.transpose() * &u - DenseMatrix::identity(p, p))) <= 1e-10);
        for (i, t) in targets.iter().enumerate() {
            prop_assert!((u.row(i).norm_squared() - t).abs() <= 1e-8);
        }
        let x = design_from_leverage(&u, &vec![2.0; p], &mut rng).unwrap();
        let lev = exact_leverage(&x).unwrap();
        for (l, t) in lev.scores.iter().zip(&targets) {
            prop_assert!((l - t).abs() <= 1e-8);
        }
    }

    #[test]
    fn structured_apply_matches_materialized(seed in any::<u64>(), which in 0usize..5, r in 1usize..20) {
        let mut rng = seeded(seed);
        let n = 16;
        let x = gaussian_design(n, 2, &mut rng).unwrap();
        let lev = exact_leverage(&x).unwrap();
        let s = SketchSpec::new(all_schemes()[which], r, seed).build(n, Some(&lev)).unwrap();
        let dense = s.materialize().unwrap();
        let a = normal_matrix(n, 3, &mut rng);
        let b = normal_matrix(n, 3, &mut rng);
        prop_assert!(max_abs(&(s.apply(&a).unwrap() - &dense * &a)) <= 1e-10);
        let lin = s.apply(&(&a + &b)).unwrap() - s.apply(&a).unwrap() - s.apply(&b).unwrap();
        prop_assert!(max_abs(&lin) <= 1e-12 * max_abs(&dense).max(1.0) * 10.0);
        prop_assert!(max_abs(&(s.apply(&DenseMatrix::identity(n, n)).unwrap() - &dense)) <= 1e-12);
        let c = normal_matrix(r, 2, &mut rng);
        prop_assert!(max_abs(&(s.apply_transpose(&c).unwrap() - dense.transpose() * &c)) <= 1e-10);
    }

    #[test]
    fn dataset_csv_round_trip_is_exact(seed in any::<u64>(), n in 3usize..20) {
        let mut rng = seeded(seed);
        let x = gaussian_design(n, 2, &mut rng).unwrap();
        let y = normal_matrix(n, 1, &mut rng).column(0).into_owned();
        let d = Dataset::new(x, y).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.x(), d.x());
        prop_assert_eq!(back.y(), d.y());
    }
}
