//! Learning per-batch combination weights over source models.
//!
//! Each source model emits class probabilities for every sample of a test
//! batch. The weights mix those pseudo-labels, and the mean Shannon entropy
//! of the mixture is minimized over the probability simplex:
//!
//! 1. initialize with `softmax(-θ)` where `θ_j` is the summed Gaussian KL
//!    divergence between the batch's BN statistics under model `j` and the
//!    statistics model `j` stored during training;
//! 2. pick one step size from the quadratic model along the gradient,
//!    `α = gᵀg / gᵀHg`, evaluated at the initialization;
//! 3. take a few projected gradient steps, rejecting any that raise the loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};
use crate::nn::{softmax, softmax_rows, MlpModel, NormMode, EPS_LOG};

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CombinationWeights(Vec<f64>);

impl CombinationWeights {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidParam("empty weight vector".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParam(format!("weights {w:?} leave the simplex")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidParam(format!("weights {w:?} sum to {sum}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, j: usize) -> Result<Self> {
        if j >= n {
            return Err(Error::InvalidParam(format!("vertex {j} of a {n}-simplex")));
        }
        let mut w = vec![0.0; n];
        w[j] = 1.0;
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest weight, smallest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn argmin(&self) -> usize {
        crate::matrix::argmin(&self.0)
    }
}

impl TryFrom<Vec<f64>> for CombinationWeights {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<CombinationWeights> for Vec<f64> {
    fn from(w: CombinationWeights) -> Self {
        w.0
    }
}

/// Per-sample, per-source class probabilities, indexed `[i][j][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelCube {
    batch: usize,
    sources: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl PseudoLabelCube {
    /// Builds the cube from one `B × K` probability matrix per source.
    pub fn from_source_probs(per_source: &[Matrix]) -> Result<Self> {
        let first = per_source
            .first()
            .ok_or_else(|| Error::InvalidParam("no sources".into()))?;
        let (b, k) = (first.rows(), first.cols());
        if per_source.iter().any(|p| p.rows() != b || p.cols() != k) {
            return Err(Error::Dimension("source probability matrices differ in shape".into()));
        }
        let n = per_source.len();
        let mut probs = Vec::with_capacity(b * n * k);
        for i in 0..b {
            for p in per_source {
                probs.extend_from_slice(p.row(i));
            }
        }
        Self::from_vec(b, n, k, probs)
    }

    pub fn from_vec(batch: usize, sources: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != batch * sources * classes {
            return Err(Error::Dimension(format!(
                "{} values for a {batch}x{sources}x{classes} cube",
                probs.len()
            )));
        }
        let cube = Self {
            batch,
            sources,
            classes,
            probs,
        };
        for i in 0..batch {
            for j in 0..sources {
                let p = cube.get(i, j);
                let s: f64 = p.iter().sum();
                if p.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParam(format!(
                        "slice ({i}, {j}) is not a probability vector"
                    )));
                }
            }
        }
        Ok(cube)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Probabilities of source `j` on sample `i`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.sources + j) * self.classes;
        &self.probs[start..start + self.classes]
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.sources {
            return Err(Error::Dimension(format!(
                "{} weights for {} sources",
                w.len(),
                self.sources
            )));
        }
        Ok(())
    }

    fn mixed_row(&self, i: usize, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, &wj) in w.iter().enumerate() {
            for (o, &p) in out.iter_mut().zip(self.get(i, j)) {
                *o += wj * p;
            }
        }
    }
}

/// `ŷ_i = Σ_j w_j ŷ_ij`, one row per sample.
pub fn weighted_pseudo_labels(cube: &PseudoLabelCube, w: &[f64]) -> Result<Matrix> {
    cube.check(w)?;
    let mut out = Matrix::zeros(cube.batch, cube.classes);
    for i in 0..cube.batch {
        cube.mixed_row(i, w, out.row_mut(i));
    }
    Ok(out)
}

/// Mean over the batch of the entropy of the weighted pseudo-labels.
pub fn weight_entropy_loss(cube: &PseudoLabelCube, w: &[f64], eps_log: f64) -> Result<f64> {
    cube.check(w)?;
    let mut row = vec![0.0; cube.classes];
    let mut total = 0.0;
    for i in 0..cube.batch {
        cube.mixed_row(i, w, &mut row);
        total -= row.iter().map(|&p| p * p.max(eps_log).ln()).sum::<f64>();
    }
    Ok(total / cube.batch as f64)
}

/// `g_j = −(1/B) Σ_i Σ_c ŷ_ijc (1 + log ŷ_ic)`.
pub fn weight_entropy_grad(cube: &PseudoLabelCube, w: &[f64], eps_log: f64) -> Result<Vec<f64>> {
    cube.check(w)?;
    let mut row = vec![0.0; cube.classes];
    let mut g = vec![0.0; cube.sources];
    for i in 0..cube.batch {
        cube.mixed_row(i, w, &mut row);
        for v in &mut row {
            *v = 1.0 + v.max(eps_log).ln();
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj -= cube.get(i, j).iter().zip(&row).map(|(p, l)| p * l).sum::<f64>();
        }
    }
    let b = cube.batch as f64;
    g.iter_mut().for_each(|v| *v /= b);
    Ok(g)
}

/// `H_jk = −(1/B) Σ_i Σ_c ŷ_ijc ŷ_ikc / max(ŷ_ic, eps_log)`; symmetric and
/// negative semidefinite.
pub fn weight_entropy_hessian(cube: &PseudoLabelCube, w: &[f64], eps_log: f64) -> Result<Matrix> {
    cube.check(w)?;
    let n = cube.sources;
    let mut row = vec![0.0; cube.classes];
    let mut h = Matrix::zeros(n, n);
    for i in 0..cube.batch {
        cube.mixed_row(i, w, &mut row);
        for j in 0..n {
            let pj = cube.get(i, j);
            for k in j..n {
                let pk = cube.get(i, k);
                let s: f64 = (0..cube.classes).map(|c| pj[c] * pk[c] / row[c].max(eps_log)).sum();
                h[(j, k)] -= s;
            }
        }
    }
    let b = cube.batch as f64;
    for j in 0..n {
        for k in j..n {
            let v = h[(j, k)] / b;
            h[(j, k)] = v;
            h[(k, j)] = v;
        }
    }
    Ok(h)
}

/// `KL(N(μ₁, σ₁²) ‖ N(μ₂, σ₂²)) = log(σ₂/σ₁) + (σ₁² + (μ₁ − μ₂)²)/(2σ₂²) − 1/2`.
pub fn gaussian_kl(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::InvalidParam(format!(
            "standard deviations must be positive, got {sigma1} and {sigma2}"
        )));
    }
    let d = mu1 - mu2;
    Ok((sigma2 / sigma1).ln() + (sigma1 * sigma1 + d * d) / (2.0 * sigma2 * sigma2) - 0.5)
}

/// Per-node Gaussian summary of one BN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGaussians {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Stored and observed BN statistics of one source model on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBnStats {
    pub stored: Vec<LayerGaussians>,
    pub observed: Vec<LayerGaussians>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnObservation {
    pub models: Vec<ModelBnStats>,
}

impl BnObservation {
    /// Forwards `x` through every model (BatchStats) and records both sides.
    /// Also returns each model's class probabilities.
    pub fn collect(models: &[MlpModel], x: &Matrix) -> Result<(Self, Vec<Matrix>)> {
        let mut stats = Vec::with_capacity(models.len());
        let mut probs = Vec::with_capacity(models.len());
        for m in models {
            let trace = m.forward(x, NormMode::BatchStats)?;
            let stored =
                m.bn.iter()
                    .map(|bn| LayerGaussians {
                        mean: bn.running_mean.clone(),
                        std: bn.running_std(),
                    })
                    .collect();
            let observed = trace
                .bn_stats
                .iter()
                .map(|s| LayerGaussians {
                    mean: s.mean.clone(),
                    std: s.std.clone(),
                })
                .collect();
            stats.push(ModelBnStats { stored, observed });
            probs.push(softmax_rows(&trace.logits));
        }
        Ok((Self { models: stats }, probs))
    }
}

/// `θ_j = Σ_l Σ_m KL(N(μ_lm^test, σ_lm^test²) ‖ N(μ_lm^j, σ_lm^j²))`, with the
/// test batch as the first argument.
pub fn bn_stat_distance(obs: &BnObservation, j: usize) -> Result<f64> {
    let m = obs
        .models
        .get(j)
        .ok_or_else(|| Error::InvalidParam(format!("no model {j} in observation")))?;
    if m.stored.len() != m.observed.len() {
        return Err(Error::Dimension(format!(
            "{} stored vs {} observed BN layers",
            m.stored.len(),
            m.observed.len()
        )));
    }
    let mut theta = 0.0;
    for (s, o) in m.stored.iter().zip(&m.observed) {
        if s.mean.len() != o.mean.len() || s.std.len() != o.std.len() || s.mean.len() != s.std.len() {
            return Err(Error::Dimension("BN node counts differ".into()));
        }
        for node in 0..s.mean.len() {
            theta += gaussian_kl(o.mean[node], o.std[node], s.mean[node], s.std[node])?;
        }
    }
    Ok(theta)
}

/// `softmax(−θ)`: closer sources get more weight.
pub fn init_weights(theta: &[f64]) -> Result<CombinationWeights> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParam(format!("non-finite distances {theta:?}")));
    }
    let neg: Vec<f64> = theta.iter().map(|t| -t).collect();
    CombinationWeights::new(softmax(&neg))
}

/// Bounds and fallback for the Newton step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepClamp {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_default: f64,
}

impl Default for StepClamp {
    fn default() -> Self {
        Self {
            alpha_min: 1e-3,
            alpha_max: 10.0,
            alpha_default: 0.1,
        }
    }
}

impl StepClamp {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha_min > 0.0
            && self.alpha_min <= self.alpha_max
            && self.alpha_max.is_finite()
            && self.alpha_default > 0.0
            && self.alpha_default.is_finite();
        if !ok {
            return Err(Error::InvalidParam(format!("bad step clamp {self:?}")));
        }
        Ok(())
    }

    fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.alpha_min, self.alpha_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepBranch {
    /// Positive curvature along the gradient: the quadratic minimizer.
    Newton,
    /// Non-positive or negligible curvature: magnitude of the ratio.
    Magnitude,
    /// Vanishing gradient or infinite ratio.
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStep {
    pub alpha: f64,
    /// `gᵀg / gᵀHg` before any safeguard.
    pub raw: f64,
    pub branch: StepBranch,
}

/// Step size minimizing the second-order model along `−g`, with the
/// negative-curvature safeguard.
pub fn newton_step(g: &[f64], h: &Matrix, clamp: &StepClamp) -> Result<NewtonStep> {
    let n = g.len();
    if h.rows() != n || h.cols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} Hessian for gradient of length {n}",
            h.rows(),
            h.cols()
        )));
    }
    let gg: f64 = g.iter().map(|v| v * v).sum();
    let ghg: f64 = (0..n)
        .map(|j| g[j] * (0..n).map(|k| h[(j, k)] * g[k]).sum::<f64>())
        .sum();
    let raw = gg / ghg;
    let default = NewtonStep {
        alpha: clamp.alpha_default,
        raw,
        branch: StepBranch::Default,
    };
    if !(gg.sqrt() >= 1e-12) {
        return Ok(default);
    }
    if ghg <= 1e-12 * gg {
        if raw.is_finite() {
            return Ok(NewtonStep {
                alpha: clamp.clamp(raw.abs()),
                raw,
                branch: StepBranch::Magnitude,
            });
        }
        return Ok(default);
    }
    Ok(NewtonStep {
        alpha: clamp.clamp(raw),
        raw,
        branch: StepBranch::Newton,
    })
}

/// The step size alone; see [`newton_step`].
pub fn best_step_size(g: &[f64], h: &Matrix, clamp: &StepClamp) -> Result<f64> {
    Ok(newton_step(g, h, clamp)?.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// `softmax(v)`.
    #[default]
    SoftmaxReproject,
    /// Nearest simplex point in Euclidean distance.
    EuclideanProject,
}

impl std::str::FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "softmax_reproject" => Ok(Self::SoftmaxReproject),
            "euclidean" | "euclidean_project" => Ok(Self::EuclideanProject),
            _ => Err(Error::InvalidParam(format!(
                "unknown projection {s:?} (expected softmax or euclidean)"
            ))),
        }
    }
}

/// Maps an arbitrary vector onto the simplex.
pub fn project_simplex(v: &[f64], mode: Projection) -> Result<CombinationWeights> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParam(format!("cannot project {v:?}")));
    }
    let w = match mode {
        Projection::SoftmaxReproject => softmax(v),
        Projection::EuclideanProject => euclidean_simplex_projection(v),
    };
    CombinationWeights::new(w)
}

// Sort-based projection: find the threshold τ with Σ max(v_i − τ, 0) = 1.
fn euclidean_simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    // Renormalize away rounding so the sum is 1 to machine precision.
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolveReport {
    pub w_init: CombinationWeights,
    pub alpha_best: f64,
    /// Loss at `w_init` followed by the loss after each iteration.
    pub losses: Vec<f64>,
    pub w_final: CombinationWeights,
    pub iterations_accepted: usize,
}

/// Retries after the first rejected step, each with half the step size.
pub const MAX_HALVINGS: usize = 3;

/// Projected gradient descent on the weight entropy with a fixed step size.
///
/// A candidate is accepted only if it lowers the loss (beyond rounding
/// noise); otherwise the step is halved up to [`MAX_HALVINGS`] times, after
/// which the iteration keeps `w`.
pub fn optimize_weights(
    cube: &PseudoLabelCube,
    w_init: &CombinationWeights,
    alpha: f64,
    iters: usize,
    mode: Projection,
    eps_log: f64,
) -> Result<WeightSolveReport> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParam(format!("step size must be positive, got {alpha}")));
    }
    let mut w = w_init.clone();
    let mut cur = weight_entropy_loss(cube, w.as_slice(), eps_log)?;
    let mut losses = Vec::with_capacity(iters + 1);
    losses.push(cur);
    let mut accepted = 0;
    for _ in 0..iters {
        let g = weight_entropy_grad(cube, w.as_slice(), eps_log)?;
        let mut a = alpha;
        for _ in 0..=MAX_HALVINGS {
            let v: Vec<f64> = w.as_slice().iter().zip(&g).map(|(wj, gj)| wj - a * gj).collect();
            let cand = project_simplex(&v, mode)?;
            let l = weight_entropy_loss(cube, cand.as_slice(), eps_log)?;
            let slack = 4.0 * f64::EPSILON * cur.abs().max(1.0);
            if l < cur - slack {
                w = cand;
                cur = l;
                accepted += 1;
                break;
            }
            a *= 0.5;
        }
        losses.push(cur);
    }
    Ok(WeightSolveReport {
        w_init: w_init.clone(),
        alpha_best: alpha,
        losses,
        w_final: w,
        iterations_accepted: accepted,
    })
}

/// `Σ_j w_j P_j` for per-source probability matrices.
pub fn combine_probs(per_source: &[Matrix], w: &CombinationWeights) -> Result<Matrix> {
    if per_source.len() != w.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} sources",
            w.len(),
            per_source.len()
        )));
    }
    let first = &per_source[0];
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for (p, &wj) in per_source.iter().zip(w.as_slice()) {
        if p.rows() != first.rows() || p.cols() != first.cols() {
            return Err(Error::Dimension("source probability shapes differ".into()));
        }
        for (o, &v) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *o += wj * v;
        }
    }
    Ok(out)
}

pub fn check_compatible(models: &[MlpModel]) -> Result<()> {
    let first = models.first().ok_or_else(|| Error::Incompatible("no models".into()))?;
    for (j, m) in models.iter().enumerate() {
        if m.input_dim() != first.input_dim() || m.num_classes() != first.num_classes() {
            return Err(Error::Incompatible(format!(
                "model {j} maps {} -> {}, model 0 maps {} -> {}",
                m.input_dim(),
                m.num_classes(),
                first.input_dim(),
                first.num_classes()
            )));
        }
    }
    Ok(())
}

/// Weighted ensemble prediction with every model in BatchStats mode.
pub fn ensemble_predict(models: &[MlpModel], w: &CombinationWeights, x: &Matrix) -> Result<Matrix> {
    check_compatible(models)?;
    let probs = models
        .iter()
        .map(|m| m.predict_proba(x, NormMode::BatchStats))
        .collect::<Result<Vec<_>>>()?;
    combine_probs(&probs, w)
}

/// Weight-solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub iters: usize,
    pub projection: Projection,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_default: f64,
    pub eps_log: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let c = StepClamp::default();
        Self {
            iters: 5,
            projection: Projection::SoftmaxReproject,
            alpha_min: c.alpha_min,
            alpha_max: c.alpha_max,
            alpha_default: c.alpha_default,
            eps_log: EPS_LOG,
        }
    }
}

impl SolverConfig {
    pub fn clamp(&self) -> StepClamp {
        StepClamp {
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            alpha_default: self.alpha_default,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.clamp().validate()?;
        if !(self.eps_log > 0.0 && self.eps_log < 1.0) {
            return Err(Error::InvalidParam(format!("eps_log {} outside (0, 1)", self.eps_log)));
        }
        Ok(())
    }
}

/// Everything the weight learner produces for one batch.
#[derive(Debug, Clone)]
pub struct BatchSolve {
    pub probs: Vec<Matrix>,
    pub theta: Vec<f64>,
    pub step: NewtonStep,
    pub report: WeightSolveReport,
    /// Ensemble probabilities under the learned weights.
    pub prediction: Matrix,
}

/// Runs the full weight learner on an unlabeled batch.
pub fn solve_batch(models: &[MlpModel], x: &Matrix, cfg: &SolverConfig) -> Result<BatchSolve> {
    check_compatible(models)?;
    let (obs, probs) = BnObservation::collect(models, x)?;
    let theta = (0..models.len())
        .map(|j| bn_stat_distance(&obs, j))
        .collect::<Result<Vec<_>>>()?;
    let w_init = init_weights(&theta)?;
    let cube = PseudoLabelCube::from_source_probs(&probs)?;
    let g = weight_entropy_grad(&cube, w_init.as_slice(), cfg.eps_log)?;
    let h = weight_entropy_hessian(&cube, w_init.as_slice(), cfg.eps_log)?;
    let step = newton_step(&g, &h, &cfg.clamp())?;
    let report = optimize_weights(&cube, &w_init, step.alpha, cfg.iters, cfg.projection, cfg.eps_log)?;
    let prediction = combine_probs(&probs, &report.w_final)?;
    Ok(BatchSolve {
        probs,
        theta,
        step,
        report,
        prediction,
    })
}
