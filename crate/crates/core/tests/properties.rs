//! Invariants over generated inputs.

mod common;

use common::{gaussian_matrix, random_cube, random_model, rng};
use meta_tta::adapters::state_bits;
use meta_tta::ensemble::{
    best_step_size, ensemble_predict, gaussian_kl, init_weights, optimize_weights, project_simplex,
    weight_entropy_hessian, weight_entropy_loss, weighted_pseudo_labels, CombinationWeights, Projection, StepClamp,
};
use meta_tta::nn::{softmax_rows, NormMode, EPS_LOG};
use meta_tta::scenario::{chunk_ranges, default_domains, sample_batch, MixtureSpec, Source};
use meta_tta::{Matrix, MlpModel};
use proptest::prelude::*;

fn simplex_ok(w: &CombinationWeights) -> bool {
    let s: f64 = w.as_slice().iter().sum();
    w.as_slice().iter().all(|&v| v >= 0.0) && (s - 1.0).abs() <= 1e-9
}

fn finite_vec(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..8, seed in any::<u64>(), scale in 0.0..500.0f64) {
        let z = gaussian_matrix(&mut rng(seed), rows, cols, scale);
        let p = softmax_rows(&z);
        for r in p.row_iter() {
            let s: f64 = r.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forward_is_pure(seed in 0u64..1000, b in 2usize..20) {
        let m = random_model(seed, &[5, 7, 6, 3]);
        let before = state_bits(&m);
        let x = gaussian_matrix(&mut rng(seed), b, 5, 1.0);
        for mode in [NormMode::BatchStats, NormMode::RunningStats] {
            let a = m.forward(&x, mode).unwrap().logits;
            let c = m.forward(&x, mode).unwrap().logits;
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&c));
        }
        let _ = m.grad_bn_affine(&x, EPS_LOG).unwrap();
        let _ = m.grad_full(&x, &vec![0; b]).unwrap();
        prop_assert_eq!(state_bits(&m), before);
    }

    #[test]
    fn batch_stats_whiten_each_feature(seed in 0u64..1000, b in 8usize..64) {
        let m = random_model(seed, &[5, 7, 6, 3]);
        let x = gaussian_matrix(&mut rng(seed), b, 5, 30.0);
        let t = m.forward(&x, NormMode::BatchStats).unwrap();
        for l in 0..m.bn.len() {
            let pre = t.pre_bn(l);
            let var = pre.column_variances(&pre.column_means());
            let xh = t.normalized(l);
            let mean = xh.column_means();
            let sd: Vec<f64> = xh.column_variances(&mean).iter().map(|v| v.sqrt()).collect();
            for c in 0..xh.cols() {
                prop_assert!(mean[c].abs() < 1e-9);
                // only meaningful when eps is negligible against the variance
                if var[c] > 10.0 {
                    prop_assert!((sd[c] - 1.0).abs() < 1e-6, "sd {} var {}", sd[c], var[c]);
                }
            }
        }
    }

    #[test]
    fn projections_land_on_simplex(v in finite_vec(1..8)) {
        for mode in [Projection::SoftmaxReproject, Projection::EuclideanProject] {
            prop_assert!(simplex_ok(&project_simplex(&v, mode).unwrap()));
        }
    }

    #[test]
    fn euclidean_projection_is_idempotent(v in finite_vec(1..8)) {
        let p = project_simplex(&v, Projection::EuclideanProject).unwrap();
        let q = project_simplex(p.as_slice(), Projection::EuclideanProject).unwrap();
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_solve_keeps_invariants(
        seed in any::<u64>(),
        n in 1usize..5,
        alpha in 1e-3..10.0f64,
        iters in 0usize..8,
        euclid in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let cube = random_cube(&mut r, 7, n, 4, 3.0);
        let w0 = project_simplex(&gaussian_matrix(&mut r, 1, n, 1.0).into_vec(), Projection::SoftmaxReproject).unwrap();
        let mode = if euclid { Projection::EuclideanProject } else { Projection::SoftmaxReproject };
        let rep = optimize_weights(&cube, &w0, alpha, iters, mode, EPS_LOG).unwrap();
        prop_assert!(simplex_ok(&rep.w_final));
        prop_assert_eq!(rep.losses.len(), iters + 1);
        for pair in rep.losses.windows(2) {
            prop_assert!(pair[1] <= pair[0]);
        }
        prop_assert_eq!(*rep.losses.last().unwrap(), weight_entropy_loss(&cube, rep.w_final.as_slice(), EPS_LOG).unwrap());
        if iters == 0 {
            prop_assert_eq!(&rep.w_final, &w0);
        }
    }

    #[test]
    fn pseudo_labels_and_hessian_shape(seed in any::<u64>(), n in 1usize..5, k in 2usize..6) {
        let mut r = rng(seed);
        let cube = random_cube(&mut r, 5, n, k, 2.0);
        let w = project_simplex(&gaussian_matrix(&mut r, 1, n, 1.0).into_vec(), Projection::SoftmaxReproject).unwrap();
        let y = weighted_pseudo_labels(&cube, w.as_slice()).unwrap();
        for row in y.row_iter() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let h = weight_entropy_hessian(&cube, w.as_slice(), EPS_LOG).unwrap();
        prop_assert_eq!(&h, &h.transpose());
    }

    #[test]
    fn init_weights_reverse_the_distance_order(theta in prop::collection::vec(0.0..30.0f64, 2..6), c in -100.0..100.0f64) {
        let w = init_weights(&theta).unwrap();
        prop_assert!(simplex_ok(&w));
        for j in 0..theta.len() {
            for k in 0..theta.len() {
                if theta[j] + 1e-6 < theta[k] {
                    prop_assert!(w.as_slice()[j] > w.as_slice()[k]);
                }
            }
        }
        let moved: Vec<f64> = theta.iter().map(|t| t + c).collect();
        let w2 = init_weights(&moved).unwrap();
        for (a, b) in w.as_slice().iter().zip(w2.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_size_always_usable(g in finite_vec(1..5), hs in finite_vec(25..26)) {
        let n = g.len();
        let h = Matrix::from_vec(n, n, hs[..n * n].to_vec()).unwrap();
        let c = StepClamp::default();
        let a = best_step_size(&g, &h, &c).unwrap();
        prop_assert!(a.is_finite() && a >= c.alpha_min && a <= c.alpha_max);
    }

    #[test]
    fn kl_is_nonnegative(m1 in -10.0..10.0f64, s1 in 1e-3..10.0f64, m2 in -10.0..10.0f64, s2 in 1e-3..10.0f64) {
        prop_assert!(gaussian_kl(m1, s1, m2, s2).unwrap() >= -1e-12);
        prop_assert_eq!(gaussian_kl(m1, s1, m1, s1).unwrap(), 0.0);
    }

    #[test]
    fn one_hot_ensemble_is_the_model(seed in 0u64..1000, j in 0usize..3) {
        let models: Vec<MlpModel> = (0..3).map(|i| random_model(seed + i, &[5, 7, 6, 3])).collect();
        let x = gaussian_matrix(&mut rng(seed), 9, 5, 1.0);
        let w = CombinationWeights::one_hot(3, j).unwrap();
        let p = ensemble_predict(&models, &w, &x).unwrap();
        let q = models[j].predict_proba(&x, NormMode::BatchStats).unwrap();
        prop_assert_eq!(p.as_slice(), q.as_slice());
    }

    #[test]
    fn model_json_roundtrip(seed in any::<u64>()) {
        let m = random_model(seed, &[4, 6, 3]);
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(state_bits(&back), state_bits(&m));
        prop_assert_eq!(back.layer_dims(), m.layer_dims());
    }

    #[test]
    fn chunks_cover_without_singletons(n in 2usize..1000, chunk in 2usize..300) {
        let ranges = chunk_ranges(n, chunk).unwrap();
        let mut next = 0;
        for r in &ranges {
            prop_assert_eq!(r.start, next);
            prop_assert!(r.len() >= 2 && r.len() <= chunk + 1);
            next = r.end;
        }
        prop_assert_eq!(next, n);
    }

    #[test]
    fn mixture_draws_respect_support(seed in any::<u64>(), raw in prop::collection::vec(0.0..1.0f64, 4)) {
        prop_assume!(raw.iter().sum::<f64>() > 0.1);
        let s: f64 = raw.iter().sum();
        let mut pi: Vec<f64> = raw.iter().map(|v| v / s).collect();
        pi[1] = 0.0;
        let s: f64 = pi.iter().sum();
        prop_assume!(s > 0.0);
        let pi = MixtureSpec::new(pi.iter().map(|v| v / s).collect()).unwrap();
        let domains = default_domains(seed % 7).unwrap();
        let b = sample_batch(Source::Mixture(&domains, &pi), 32, seed).unwrap();
        prop_assert!(b.provenance.iter().all(|&d| pi.pi()[d] > 0.0));
        prop_assert!(b.y.iter().all(|&c| c < 5));
        prop_assert_eq!(b.x.rows(), 32);
    }
}
