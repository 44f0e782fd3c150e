#![allow(dead_code)]

use meta_tta::ensemble::{weight_entropy_loss, PseudoLabelCube};
use meta_tta::nn::{softmax, ParamSet, EPS_LOG};
use meta_tta::seed::{rng_for, Purpose};
use meta_tta::{Matrix, MlpModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, Purpose::Derived, 0xfeed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Cube of softmax(scale·z) probability vectors.
pub fn random_cube(rng: &mut ChaCha8Rng, b: usize, n: usize, k: usize, scale: f64) -> PseudoLabelCube {
    let mut probs = Vec::with_capacity(b * n * k);
    for _ in 0..b * n {
        let z: Vec<f64> = (0..k).map(|_| scale * normal(rng)).collect();
        probs.extend(softmax(&z));
    }
    PseudoLabelCube::from_vec(b, n, k, probs).unwrap()
}

/// A point strictly inside the simplex.
pub fn interior_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// A freshly initialised model with randomised BN affine parameters.
pub fn random_model(seed: u64, dims: &[usize]) -> MlpModel {
    let mut m = MlpModel::new(dims, seed, 0).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let p: Vec<f64> = m
        .params(ParamSet::BnAffine)
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if i % 2 == 0 {
                1.0 + 0.3 * normal(&mut r)
            } else {
                0.3 * normal(&mut r)
            }
        })
        .collect();
    m.set_params(ParamSet::BnAffine, &p).unwrap();
    m
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

type SourceCache = std::sync::Mutex<std::collections::HashMap<(u64, u64), std::sync::Arc<Vec<MlpModel>>>>;

/// The four default-geometry sources for `seed` at `noise`, trained once per
/// test binary.
pub fn trained_sources(seed: u64, noise: f64) -> std::sync::Arc<Vec<MlpModel>> {
    use meta_tta::scenario::{domains_with_noise, train_sources, TrainConfig};
    static CACHE: std::sync::OnceLock<SourceCache> = std::sync::OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (seed, noise.to_bits());
    if let Some(m) = cache.lock().unwrap().get(&key) {
        return m.clone();
    }
    let domains = domains_with_noise(seed, noise).unwrap();
    let models = std::sync::Arc::new(train_sources(&domains, seed, &TrainConfig::default()).unwrap());
    cache.lock().unwrap().insert(key, models.clone());
    models
}

pub fn loss(cube: &PseudoLabelCube, w: &[f64]) -> f64 {
    weight_entropy_loss(cube, w, EPS_LOG).unwrap()
}

fn shifted(w: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut v = w.to_vec();
    for &(j, d) in moves {
        v[j] += d;
    }
    v
}

pub fn numeric_grad(cube: &PseudoLabelCube, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|j| (loss(cube, &shifted(w, &[(j, h)])) - loss(cube, &shifted(w, &[(j, -h)]))) / (2.0 * h))
        .collect()
}

/// Mixed second differences of the loss itself.
#[allow(clippy::needless_range_loop)]
pub fn numeric_hessian(cube: &PseudoLabelCube, w: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = w.len();
    let mut out = vec![vec![0.0; n]; n];
    for j in 0..n {
        for k in 0..n {
            let f = |a: f64, b: f64| loss(cube, &shifted(w, &[(j, a), (k, b)]));
            out[j][k] = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
        }
    }
    out
}

/// `∫ p log(p/q)` by composite Simpson over `μ1 ± 16σ1`.
pub fn kl_by_integration(mu1: f64, s1: f64, mu2: f64, s2: f64) -> f64 {
    let n = 40_000;
    let (a, b) = (mu1 - 16.0 * s1, mu1 + 16.0 * s1);
    let h = (b - a) / n as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let log_pdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * ln2pi;
    let f = |x: f64| {
        let lp = log_pdf(x, mu1, s1);
        lp.exp() * (lp - log_pdf(x, mu2, s2))
    };
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}
