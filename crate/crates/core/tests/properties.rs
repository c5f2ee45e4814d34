//! Property tests for the invariants each module promises.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fshbmap::baselines::{cosamp, omp, GreedyConfig};
use fshbmap::model::{objective_exact_terms, objective_fast_terms};
use fshbmap::operators::unitarity_defect;
use fshbmap::pipeline::default_spsa;
use fshbmap::type1::solve_type1_thresholded;
use fshbmap::{
    apply_h, build_b, build_dictionary, build_radon_matrix, objective_exact, objective_fast,
    phantom, rmse, run_spsa, solve_type1, ssim, DictionaryKind, HyperParams, Image, Measurement,
    ModelMatrices, PhantomSpec, Prepared, RadonSpec, ReconTask, SpsaConfig, SsimConfig,
};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn params() -> impl Strategy<Value = HyperParams> {
    (0.1..5.0f64, 0.01..2.0f64, 0.3..3.0f64, 0.3..3.0f64).prop_map(|(su, se, a, sx)| HyperParams {
        sigma_u_sq: su,
        sigma_eps_sq: se,
        a,
        sigma_x_sq: sx,
        ..HyperParams::default()
    })
}

fn random_image(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Image {
    Image::new(
        width,
        height,
        (0..width * height).map(|_| rng.random()).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn h_is_positive_and_monotone(
        x in prop::collection::vec(-20.0..20.0f64, 1..16),
        bump in prop::collection::vec(0.0..5.0f64, 16),
        a in 0.1..4.0f64,
    ) {
        let x = DVector::from_vec(x);
        let raised = DVector::from_fn(x.len(), |i, _| x[i] + bump[i]);
        let (h, h_raised) = (apply_h(&x, a).unwrap(), apply_h(&raised, a).unwrap());
        for i in 0..x.len() {
            prop_assert!(h[i] > 0.0);
            prop_assert!(h[i] <= h_raised[i]);
        }
    }

    #[test]
    fn b_is_symmetric_with_noise_floor(seed in any::<u64>(), n in 1..=16usize, m in 1..=16usize, p in params()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelMatrices::from_sensing(gaussian(&mut rng, m, n));
        let x = gaussian_vec(&mut rng, n);
        let b = build_b(&model, &x, &p).unwrap();
        prop_assert!((&b - b.transpose()).amax() <= 1e-12 * b.amax().max(1.0));
        let smallest = b.symmetric_eigenvalues().min();
        prop_assert!(smallest >= p.sigma_eps_sq - 1e-10 * b.amax().max(1.0));
    }

    #[test]
    fn fast_and_exact_objectives_differ_only_in_log_det(
        seed in any::<u64>(), n in 1..=10usize, m in 1..=10usize, p in params(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelMatrices::from_sensing(gaussian(&mut rng, m, n));
        let x = gaussian_vec(&mut rng, n);
        let y = Measurement::new(gaussian_vec(&mut rng, m), p.sigma_eps_sq);
        let exact = objective_exact_terms(&x, &y, &model, &p).unwrap();
        let fast = objective_fast_terms(&x, &y, &model, &p).unwrap();
        prop_assert_eq!(exact.data_fit, fast.data_fit);
        prop_assert_eq!(exact.prior, fast.prior);
        let gap = objective_exact(&x, &y, &model, &p).unwrap() - objective_fast(&x, &y, &model, &p).unwrap();
        let expected = exact.log_det - x.sum() / p.a;
        prop_assert!((gap - expected).abs() <= 1e-9 * exact.total().abs().max(1.0));
    }

    #[test]
    fn determinant_is_superadditive_on_psd(seed in any::<u64>(), n in 1..=8usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ka, kb) = (rng.random_range(1..=n), rng.random_range(1..=n));
        let (ga, gb) = (gaussian(&mut rng, n, ka), gaussian(&mut rng, n, kb));
        let (a, b) = (&ga * ga.transpose(), &gb * gb.transpose());
        let sum = (&a + &b).determinant();
        prop_assert!(sum >= a.determinant() + b.determinant() - 1e-10 * sum.abs().max(1.0));
    }

    #[test]
    fn radon_entries_are_bounded_chord_lengths(
        width in 1..=12usize, height in 1..=12usize, n_rays in 1..=8usize, samples in 1..=12usize,
    ) {
        let psi = build_radon_matrix(&RadonSpec::covering(width, height, n_rays, samples)).unwrap();
        let bound = 2f64.sqrt() * width.max(height) as f64;
        prop_assert!(psi.iter().all(|&v| (0.0..=bound).contains(&v)));
    }

    #[test]
    fn dct_is_unitary(width in 1..=12usize, height in 1..=12usize) {
        let phi = build_dictionary(DictionaryKind::Dct2D, width, height).unwrap();
        prop_assert!(unitarity_defect(&phi) <= 1e-10);
        prop_assert!((phi.determinant().abs() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn spsa_is_deterministic(seed in any::<u64>(), x0 in prop::collection::vec(-3.0..3.0f64, 1..6)) {
        let x0 = DVector::from_vec(x0);
        let cfg = SpsaConfig::new(40, seed);
        let loss = |v: &DVector<f64>| v.map(|t| t.powi(4)).sum() + v.sum();
        let (xa, ta) = run_spsa(loss, &x0, &cfg).unwrap();
        let (xb, tb) = run_spsa(loss, &x0, &cfg).unwrap();
        prop_assert_eq!(xa, xb);
        prop_assert_eq!(ta, tb);
    }

    #[test]
    fn spsa_uses_two_evaluations_per_iteration(n_iters in 0..60usize, log_every in 0..12usize) {
        let cfg = SpsaConfig { log_every, ..SpsaConfig::new(n_iters, 3) };
        let mut calls = 0;
        let (_, trace) = run_spsa(|v: &DVector<f64>| { calls += 1; v.norm_squared() }, &DVector::from_element(3, 1.0), &cfg).unwrap();
        prop_assert_eq!(calls, trace.loss_evals);
        prop_assert_eq!(trace.loss_evals - trace.logged_evals, 2 * n_iters);
    }

    #[test]
    fn type1_routes_agree(seed in any::<u64>(), n in 1..=24usize, m in 1..=24usize, p in params()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelMatrices::from_sensing(gaussian(&mut rng, m, n));
        let y = Measurement::new(gaussian_vec(&mut rng, m), p.sigma_eps_sq);
        let z = DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0));
        let direct = solve_type1(&model, &y, &z, &p).unwrap();
        let sandwiched = solve_type1_thresholded(&model, &y, &z, &p).unwrap();
        prop_assert!((&direct.beta - &sandwiched.beta).norm() <= 1e-8 * direct.beta.norm().max(1.0));
        prop_assert!(direct.residual_norm <= 1e-10 * direct.rhs_norm.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn threshold_support_shrinks_with_tau(seed in any::<u64>(), n in 1..=16usize, t1 in 0.0..3.0f64, t2 in 0.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ModelMatrices::from_sensing(gaussian(&mut rng, n + 2, n));
        let y = Measurement::new(gaussian_vec(&mut rng, n + 2), 0.1);
        let z = DVector::from_fn(n, |_, _| rng.random_range(0.0..3.0));
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let support = |tau| {
            let p = HyperParams { tau, ..HyperParams::default() };
            solve_type1_thresholded(&model, &y, &z, &p).unwrap().support.len()
        };
        prop_assert!(support(hi) <= support(lo));
    }

    #[test]
    fn weak_prior_recovers_least_squares(seed in any::<u64>(), n in 1..=12usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, n, n).qr().q();
        let y = gaussian_vec(&mut rng, n);
        let p = HyperParams { sigma_u_sq: 1e8, ..HyperParams::default() };
        let beta = solve_type1(&ModelMatrices::from_sensing(x.clone()), &Measurement::new(y.clone(), p.sigma_eps_sq), &DVector::from_element(n, 1.0), &p).unwrap().beta;
        let ls = x.tr_mul(&y);
        prop_assert!((beta - &ls).norm() <= 1e-4 * ls.norm().max(1.0));
    }

    #[test]
    fn ssim_is_bounded_symmetric_and_reflexive(seed in any::<u64>(), width in 3..=20usize, height in 3..=20usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_image(&mut rng, width, height), random_image(&mut rng, width, height));
        let cfg = SsimConfig::for_size(width, height);
        let ab = ssim(&a, &b, &cfg).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - ssim(&b, &a, &cfg).unwrap()).abs() <= 1e-12);
        prop_assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn rmse_matches_naive_loop(seed in any::<u64>(), width in 1..=20usize, height in 1..=20usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_image(&mut rng, width, height), random_image(&mut rng, width, height));
        let mut total = 0.0;
        for r in 0..height {
            for c in 0..width {
                total += (a.get(r, c) - b.get(r, c)).powi(2);
            }
        }
        let naive = total / (width * height) as f64;
        prop_assert!((rmse(&a, &b).unwrap().powi(2) - naive).abs() <= 1e-12);
    }

    #[test]
    fn greedy_outputs_are_sparse_and_repeatable(seed in any::<u64>(), s in 1..=6usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, 24, 40);
        let y = gaussian_vec(&mut rng, 24);
        let cfg = GreedyConfig::new(s);
        let o = omp(&x, &y, &cfg).unwrap();
        prop_assert!(o.beta.iter().filter(|v| **v != 0.0).count() <= s);
        prop_assert!(o.residual_norms.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert_eq!(&o, &omp(&x, &y, &cfg).unwrap());
        let c = cosamp(&x, &y, &cfg).unwrap();
        prop_assert!(c.beta.iter().filter(|v| **v != 0.0).count() <= s);
        prop_assert_eq!(&c, &cosamp(&x, &y, &cfg).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reconstruction_is_deterministic_and_accounted(seed in 0..1000u64, n_iters in 0..40usize) {
        let task = ReconTask {
            ground_truth: phantom(&PhantomSpec::new(8, 8)),
            radon: RadonSpec::covering(8, 8, 6, 12),
            dictionary: DictionaryKind::Haar2D,
            params: HyperParams::default(),
            spsa: default_spsa(n_iters, seed),
            seed,
        };
        let prepared = Prepared::new(&task).unwrap();
        let session = prepared.session(prepared.simulate(seed).unwrap()).unwrap();
        let a = session.fshbmap(seed, &task.spsa).unwrap();
        let b = session.fshbmap(seed, &task.spsa).unwrap();
        prop_assert_eq!(&a.beta, &b.beta);
        prop_assert_eq!(a.ssim, b.ssim);
        prop_assert_eq!(&a.trace, &b.trace);
        let logged = a.trace.as_ref().unwrap().logged_evals;
        prop_assert_eq!(a.loss_evals, 2 * n_iters + logged);
    }
}
