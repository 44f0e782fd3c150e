//! Backprop checked against central finite differences.

mod common;

use common::{gaussian_matrix, random_model, rel_err, rng};
use meta_tta::nn::{cross_entropy_loss, flatten_bn, mean_entropy, NormMode, ParamSet, EPS_LOG};
use meta_tta::{Matrix, MlpModel};
use rand::seq::index::sample;
use rand::Rng;

const H: f64 = 1e-5;
const MIN_CHECKED: usize = 20;

/// Sign pattern of every hidden pre-activation on `x`.
fn relu_pattern(m: &MlpModel, x: &Matrix) -> Vec<bool> {
    let trace = m.forward(x, NormMode::BatchStats).unwrap();
    let mut out = Vec::new();
    for (l, bn) in m.bn.iter().enumerate() {
        let xh = trace.normalized(l);
        for i in 0..xh.rows() {
            for c in 0..xh.cols() {
                out.push(bn.gamma[c] * xh[(i, c)] + bn.beta[c] > 0.0);
            }
        }
    }
    out
}

/// Compares `analytic` with central differences on random coordinates,
/// skipping any whose probes straddle a ReLU kink.
fn check(model: &MlpModel, x: &Matrix, set: ParamSet, analytic: &[f64], loss: impl Fn(&MlpModel) -> f64, seed: u64) {
    let base = model.params(set);
    assert_eq!(base.len(), analytic.len());
    let mut r = rng(seed);
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for i in sample(&mut r, base.len(), base.len()) {
        if checked == MIN_CHECKED + 10 {
            break;
        }
        let mut up = model.clone();
        let mut p = base.clone();
        p[i] = base[i] + H;
        up.set_params(set, &p).unwrap();
        let mut down = model.clone();
        p[i] = base[i] - H;
        down.set_params(set, &p).unwrap();
        if relu_pattern(&up, x) != relu_pattern(&down, x) {
            continue;
        }
        let numeric = (loss(&up) - loss(&down)) / (2.0 * H);
        worst = worst.max(rel_err(analytic[i], numeric, 1e-6));
        checked += 1;
    }
    assert!(checked >= MIN_CHECKED, "only {checked} smooth coordinates");
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn entropy_gradient_wrt_bn_affine() {
    for seed in 0..6 {
        let model = random_model(seed, &[6, 12, 10, 4]);
        let x = gaussian_matrix(&mut rng(seed + 100), 24, 6, 1.5);
        let (loss, grads) = model.grad_bn_affine(&x, EPS_LOG).unwrap();
        assert!((loss - mean_entropy(&model, &x, EPS_LOG).unwrap()).abs() < 1e-14);
        let f = |m: &MlpModel| mean_entropy(m, &x, EPS_LOG).unwrap();
        check(&model, &x, ParamSet::BnAffine, &flatten_bn(&grads), f, seed);
    }
}

#[test]
fn cross_entropy_gradient_wrt_all_params() {
    for seed in 0..6 {
        let model = random_model(seed, &[6, 12, 10, 4]);
        let mut r = rng(seed + 200);
        let x = gaussian_matrix(&mut r, 24, 6, 1.5);
        let y: Vec<usize> = (0..24).map(|_| r.random_range(0..4)).collect();
        let (loss, grads, _) = model.grad_full(&x, &y).unwrap();
        assert!((loss - cross_entropy_loss(&model, &x, &y).unwrap()).abs() < 1e-14);
        let f = |m: &MlpModel| cross_entropy_loss(m, &x, &y).unwrap();
        check(&model, &x, ParamSet::All, &grads.flatten(ParamSet::All), f, seed);
    }
}

#[test]
fn default_architecture_gradients() {
    let model = random_model(42, &[16, 64, 64, 5]);
    let x = gaussian_matrix(&mut rng(7), 128, 16, 1.0);
    let (_, grads) = model.grad_bn_affine(&x, EPS_LOG).unwrap();
    let f = |m: &MlpModel| mean_entropy(m, &x, EPS_LOG).unwrap();
    check(&model, &x, ParamSet::BnAffine, &flatten_bn(&grads), f, 42);
}
