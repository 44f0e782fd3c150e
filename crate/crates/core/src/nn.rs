//! Batch-normalized MLP classifier with analytic backpropagation.
//!
//! Topology is fixed: `dense -> BN -> ReLU` for every hidden layer, then a
//! final dense layer producing logits. Batch-norm layers keep per-feature
//! running statistics, which double as the model's source-domain signature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Probability floor applied before every logarithm.
pub const EPS_LOG: f64 = 1e-12;

/// Which statistics a BN layer normalizes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Stored running mean/variance (classic inference mode).
    RunningStats,
    /// Mean/variance of the current batch (transductive).
    BatchStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BnLayer {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Standard deviation implied by the stored running variance.
    pub fn running_std(&self) -> Vec<f64> {
        self.running_var.iter().map(|&v| v.max(self.eps).sqrt()).collect()
    }

    fn validate(&self) -> Result<()> {
        let w = self.gamma.len();
        if self.beta.len() != w || self.running_mean.len() != w || self.running_var.len() != w {
            return Err(Error::Dimension("BN parameter vectors differ in length".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParam(format!(
                "BN eps must be positive, got {}",
                self.eps
            )));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "BN momentum must lie in (0, 1], got {}",
                self.momentum
            )));
        }
        if self.running_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParam("BN running variance must be positive".into()));
        }
        Ok(())
    }
}

/// Fully connected layer computing `x · w + b`, with `w` shaped `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub domain_id: usize,
    pub seed: u64,
    pub train_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelDoc", try_from = "ModelDoc")]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    pub layers: Vec<DenseLayer>,
    pub bn: Vec<BnLayer>,
    pub meta: ModelMeta,
}

/// Observed statistics of one BN layer's input on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Population variance, not floored.
    pub var: Vec<f64>,
    /// `sqrt(max(var, eps))`.
    pub std: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HiddenCache {
    input: Matrix,
    pre_bn: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
    pre_act: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Matrix,
    pub bn_stats: Vec<BatchMoments>,
    mode: NormMode,
    hidden: Vec<HiddenCache>,
    final_input: Matrix,
}

impl ForwardTrace {
    pub fn mode(&self) -> NormMode {
        self.mode
    }

    /// Pre-normalization activations feeding BN layer `l`.
    pub fn pre_bn(&self, l: usize) -> &Matrix {
        &self.hidden[l].pre_bn
    }

    /// Normalized activations of BN layer `l` before the affine transform.
    pub fn normalized(&self, l: usize) -> &Matrix {
        &self.hidden[l].xhat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrad {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dense: Vec<DenseGrad>,
    pub bn: Vec<BnGrad>,
}

/// Parameter subsets addressable as flat vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSet {
    /// Every dense weight and bias followed by every BN gamma and beta.
    All,
    /// BN gamma and beta only, layer by layer.
    BnAffine,
}

impl Gradients {
    pub fn flatten(&self, set: ParamSet) -> Vec<f64> {
        let mut out = Vec::new();
        if set == ParamSet::All {
            for d in &self.dense {
                out.extend_from_slice(d.w.as_slice());
                out.extend_from_slice(&d.b);
            }
        }
        flatten_bn_grads(&self.bn, &mut out);
        out
    }
}

fn flatten_bn_grads(bn: &[BnGrad], out: &mut Vec<f64>) {
    for g in bn {
        out.extend_from_slice(&g.gamma);
        out.extend_from_slice(&g.beta);
    }
}

/// Flattened BN-affine gradients in [`ParamSet::BnAffine`] order.
pub fn flatten_bn(bn: &[BnGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    flatten_bn_grads(bn, &mut out);
    out
}

impl MlpModel {
    /// He-initialized model; BN layers start at identity (γ=1, β=0, μ=0, σ²=1).
    pub fn new(layer_dims: &[usize], seed: u64, domain_id: usize) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidParam(format!(
                "layer dims {layer_dims:?} must have at least two positive entries"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal =
                Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::InvalidParam(e.to_string()))?;
            let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            layers.push(DenseLayer {
                w: Matrix::from_vec(fan_in, fan_out, data)?,
                b: vec![0.0; fan_out],
            });
        }
        let bn = layer_dims[1..layer_dims.len() - 1]
            .iter()
            .map(|&w| BnLayer::new(w))
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            bn,
            meta: ModelMeta {
                domain_id,
                seed,
                train_err: None,
            },
        })
    }

    /// Assembles a model from parts, checking every shape invariant.
    pub fn from_parts(layers: Vec<DenseLayer>, bn: Vec<BnLayer>, meta: ModelMeta) -> Result<Self> {
        let mut dims = Vec::with_capacity(layers.len() + 1);
        if let Some(first) = layers.first() {
            dims.push(first.w.rows());
        }
        dims.extend(layers.iter().map(|l| l.w.cols()));
        let model = Self {
            layer_dims: dims,
            layers,
            bn,
            meta,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParam("model has no layers".into()));
        }
        if self.bn.len() + 1 != self.layers.len() {
            return Err(Error::Dimension(format!(
                "{} BN layers for {} hidden layers",
                self.bn.len(),
                self.layers.len() - 1
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.rows() != self.layer_dims[i] || l.w.cols() != self.layer_dims[i + 1] {
                return Err(Error::Dimension(format!("dense layer {i} has inconsistent shape")));
            }
            if l.b.len() != l.w.cols() {
                return Err(Error::Dimension(format!("dense layer {i} bias length mismatch")));
            }
            if !l.w.is_finite() || l.b.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParam(format!("dense layer {i} has non-finite entries")));
            }
        }
        for (i, bn) in self.bn.iter().enumerate() {
            bn.validate()?;
            if bn.width() != self.layer_dims[i + 1] {
                return Err(Error::Dimension(format!("BN layer {i} width mismatch")));
            }
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated model has dims")
    }

    /// True when both models have the same layer widths.
    pub fn same_architecture(&self, other: &MlpModel) -> bool {
        self.layer_dims == other.layer_dims
    }

    pub fn forward(&self, x: &Matrix, mode: NormMode) -> Result<ForwardTrace> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        if mode == NormMode::BatchStats && x.rows() < 2 {
            return Err(Error::BatchTooSmall(x.rows()));
        }
        if x.rows() == 0 {
            return Err(Error::BatchTooSmall(0));
        }

        let mut hidden = Vec::with_capacity(self.bn.len());
        let mut bn_stats = Vec::with_capacity(self.bn.len());
        let mut act = x.clone();
        for (dense, bn) in self.layers.iter().zip(&self.bn) {
            let mut z = act.matmul(&dense.w)?;
            z.add_row_vector(&dense.b)?;

            let mean = z.column_means();
            let var = z.column_variances(&mean);
            let std = var.iter().map(|&v| v.max(bn.eps).sqrt()).collect();

            let (center, inv_std): (&[f64], Vec<f64>) = match mode {
                NormMode::BatchStats => (&mean, var.iter().map(|&v| 1.0 / (v + bn.eps).sqrt()).collect()),
                NormMode::RunningStats => (
                    &bn.running_mean,
                    bn.running_var.iter().map(|&v| 1.0 / (v + bn.eps).sqrt()).collect(),
                ),
            };

            let mut xhat = z.clone();
            let mut y = Matrix::zeros(z.rows(), z.cols());
            for i in 0..z.rows() {
                let xr = xhat.row_mut(i);
                for (m, v) in xr.iter_mut().enumerate() {
                    *v = (*v - center[m]) * inv_std[m];
                }
                let yr = y.row_mut(i);
                for m in 0..yr.len() {
                    yr[m] = bn.gamma[m] * xr[m] + bn.beta[m];
                }
            }
            let next = y.map(|v| v.max(0.0));

            bn_stats.push(BatchMoments { mean, var, std });
            hidden.push(HiddenCache {
                input: act,
                pre_bn: z,
                xhat,
                inv_std,
                pre_act: y,
            });
            act = next;
        }

        let head = self.layers.last().expect("validated model has layers");
        let mut logits = act.matmul(&head.w)?;
        logits.add_row_vector(&head.b)?;

        Ok(ForwardTrace {
            logits,
            bn_stats,
            mode,
            hidden,
            final_input: act,
        })
    }

    /// Softmax class probabilities.
    pub fn predict_proba(&self, x: &Matrix, mode: NormMode) -> Result<Matrix> {
        Ok(softmax_rows(&self.forward(x, mode)?.logits))
    }

    /// Backpropagates `dlogits` through a BatchStats trace.
    fn backward(&self, trace: &ForwardTrace, dlogits: &Matrix) -> Gradients {
        let head = self.layers.last().expect("validated model has layers");
        let mut dense = vec![
            DenseGrad {
                w: Matrix::zeros(0, 0),
                b: Vec::new(),
            };
            self.layers.len()
        ];
        let mut bn_grads = vec![
            BnGrad {
                gamma: Vec::new(),
                beta: Vec::new(),
            };
            self.bn.len()
        ];

        let last = self.layers.len() - 1;
        dense[last] = DenseGrad {
            w: trace.final_input.t_matmul(dlogits).expect("trace shapes"),
            b: dlogits.column_sums(),
        };
        let mut dact = dlogits.matmul_t(&head.w).expect("trace shapes");

        let b = dlogits.rows() as f64;
        for l in (0..self.bn.len()).rev() {
            let cache = &trace.hidden[l];
            let bn = &self.bn[l];
            let width = bn.width();

            // ReLU
            let mut dy = dact;
            for (g, &y) in dy.as_mut_slice().iter_mut().zip(cache.pre_act.as_slice()) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }

            let mut dgamma = vec![0.0; width];
            let dbeta = dy.column_sums();
            for (dr, xr) in dy.row_iter().zip(cache.xhat.row_iter()) {
                for m in 0..width {
                    dgamma[m] += dr[m] * xr[m];
                }
            }

            let mut dz = Matrix::zeros(dy.rows(), width);
            match trace.mode {
                NormMode::BatchStats => {
                    let mut sum_dxhat = vec![0.0; width];
                    let mut sum_dxhat_xhat = vec![0.0; width];
                    for (dr, xr) in dy.row_iter().zip(cache.xhat.row_iter()) {
                        for m in 0..width {
                            let dxh = dr[m] * bn.gamma[m];
                            sum_dxhat[m] += dxh;
                            sum_dxhat_xhat[m] += dxh * xr[m];
                        }
                    }
                    for i in 0..dy.rows() {
                        let dr = dy.row(i);
                        let xr = cache.xhat.row(i);
                        let out = dz.row_mut(i);
                        for m in 0..width {
                            let dxh = dr[m] * bn.gamma[m];
                            out[m] = cache.inv_std[m] / b * (b * dxh - sum_dxhat[m] - xr[m] * sum_dxhat_xhat[m]);
                        }
                    }
                }
                NormMode::RunningStats => {
                    for i in 0..dy.rows() {
                        let dr = dy.row(i);
                        let out = dz.row_mut(i);
                        for m in 0..width {
                            out[m] = dr[m] * bn.gamma[m] * cache.inv_std[m];
                        }
                    }
                }
            }

            bn_grads[l] = BnGrad {
                gamma: dgamma,
                beta: dbeta,
            };
            dense[l] = DenseGrad {
                w: cache.input.t_matmul(&dz).expect("trace shapes"),
                b: dz.column_sums(),
            };
            dact = dz.matmul_t(&self.layers[l].w).expect("trace shapes");
        }

        Gradients { dense, bn: bn_grads }
    }

    /// Mean prediction entropy under BatchStats normalization and its gradient
    /// with respect to every BN γ and β.
    pub fn grad_bn_affine(&self, x: &Matrix, eps_log: f64) -> Result<(f64, Vec<BnGrad>)> {
        let trace = self.forward(x, NormMode::BatchStats)?;
        let (loss, dlogits) = mean_entropy_and_grad(&trace.logits, eps_log);
        Ok((loss, self.backward(&trace, &dlogits).bn))
    }

    /// Mean cross-entropy under BatchStats normalization and its gradient with
    /// respect to all trainable parameters.
    pub fn grad_full(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Gradients, ForwardTrace)> {
        let k = self.num_classes();
        if labels.len() != x.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        let trace = self.forward(x, NormMode::BatchStats)?;
        let (loss, dlogits) = cross_entropy_and_grad(&trace.logits, labels);
        let grads = self.backward(&trace, &dlogits);
        Ok((loss, grads, trace))
    }

    /// Number of parameters in `set`.
    pub fn param_count(&self, set: ParamSet) -> usize {
        let bn: usize = self.bn.iter().map(|b| 2 * b.width()).sum();
        match set {
            ParamSet::BnAffine => bn,
            ParamSet::All => {
                bn + self
                    .layers
                    .iter()
                    .map(|l| l.w.as_slice().len() + l.b.len())
                    .sum::<usize>()
            }
        }
    }

    pub fn params(&self, set: ParamSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count(set));
        if set == ParamSet::All {
            for l in &self.layers {
                out.extend_from_slice(l.w.as_slice());
                out.extend_from_slice(&l.b);
            }
        }
        for bn in &self.bn {
            out.extend_from_slice(&bn.gamma);
            out.extend_from_slice(&bn.beta);
        }
        out
    }

    pub fn set_params(&mut self, set: ParamSet, values: &[f64]) -> Result<()> {
        let expected = self.param_count(set);
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "{} values for {expected} parameters",
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut [f64]| {
            for d in dst {
                *d = it.next().expect("length checked");
            }
        };
        if set == ParamSet::All {
            for l in &mut self.layers {
                fill(l.w.as_mut_slice());
                fill(&mut l.b);
            }
        }
        for bn in &mut self.bn {
            fill(&mut bn.gamma);
            fill(&mut bn.beta);
        }
        Ok(())
    }

    /// EMA update of running statistics toward a trace's observed moments:
    /// `stat ← (1 − m)·stat + m·observed`.
    pub fn blend_running_stats(&mut self, stats: &[BatchMoments], momentum: Option<f64>) -> Result<()> {
        if stats.len() != self.bn.len() {
            return Err(Error::Dimension(format!(
                "{} observations for {} BN layers",
                stats.len(),
                self.bn.len()
            )));
        }
        for (bn, obs) in self.bn.iter_mut().zip(stats) {
            if obs.mean.len() != bn.width() {
                return Err(Error::Dimension("BN observation width mismatch".into()));
            }
            let m = momentum.unwrap_or(bn.momentum);
            for i in 0..bn.width() {
                bn.running_mean[i] = (1.0 - m) * bn.running_mean[i] + m * obs.mean[i];
                // Floored so the running variance stays strictly positive.
                let v = (1.0 - m) * bn.running_var[i] + m * obs.var[i];
                bn.running_var[i] = v.max(f64::MIN_POSITIVE);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax of a vector.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `-Σ p log max(p, eps_log)` for a single distribution (natural log).
pub fn entropy(p: &[f64], eps_log: f64) -> f64 {
    -p.iter().map(|&q| q * q.max(eps_log).ln()).sum::<f64>()
}

pub fn shannon_entropy_rows(p: &Matrix, eps_log: f64) -> Vec<f64> {
    p.row_iter().map(|r| entropy(r, eps_log)).collect()
}

/// Mean softmax entropy over rows and its gradient with respect to the logits.
pub(crate) fn mean_entropy_and_grad(logits: &Matrix, eps_log: f64) -> (f64, Matrix) {
    let p = softmax_rows(logits);
    let b = logits.rows() as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut s = vec![0.0; logits.cols()];
    for i in 0..p.rows() {
        let pr = p.row(i);
        total += entropy(pr, eps_log);
        // s_c = dH/dp_c of the clamped entropy
        for (sc, &pc) in s.iter_mut().zip(pr) {
            let ind = if pc > eps_log { 1.0 } else { 0.0 };
            *sc = -(pc.max(eps_log).ln() + ind);
        }
        let ps: f64 = pr.iter().zip(&s).map(|(a, b)| a * b).sum();
        for (g, (&pc, &sc)) in grad.row_mut(i).iter_mut().zip(pr.iter().zip(&s)) {
            *g = pc * (sc - ps) / b;
        }
    }
    (total / b, grad)
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub(crate) fn cross_entropy_and_grad(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let b = logits.rows() as f64;
    let mut total = 0.0;
    let mut grad = softmax_rows(logits);
    for (i, &y) in labels.iter().enumerate() {
        let z = logits.row(i);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[y];
        let g = grad.row_mut(i);
        g[y] -= 1.0;
        for v in g.iter_mut() {
            *v /= b;
        }
    }
    (total / b, grad)
}

/// Mean cross-entropy of a model on labelled data (BatchStats forward).
pub fn cross_entropy_loss(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let trace = model.forward(x, NormMode::BatchStats)?;
    Ok(cross_entropy_and_grad(&trace.logits, labels).0)
}

/// Mean prediction entropy of a model on a batch (BatchStats forward).
pub fn mean_entropy(model: &MlpModel, x: &Matrix, eps_log: f64) -> Result<f64> {
    let trace = model.forward(x, NormMode::BatchStats)?;
    let p = softmax_rows(&trace.logits);
    let h = shannon_entropy_rows(&p, eps_log);
    Ok(h.iter().sum::<f64>() / h.len() as f64)
}

// On-disk layout of a model document.
#[derive(Serialize, Deserialize)]
struct DenseDoc {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    layer_dims: Vec<usize>,
    layers: Vec<DenseDoc>,
    bn: Vec<BnLayer>,
    meta: ModelMeta,
}

impl From<MlpModel> for ModelDoc {
    fn from(m: MlpModel) -> Self {
        ModelDoc {
            layer_dims: m.layer_dims,
            layers: m
                .layers
                .into_iter()
                .map(|l| DenseDoc {
                    w: l.w.to_rows(),
                    b: l.b,
                })
                .collect(),
            bn: m.bn,
            meta: m.meta,
        }
    }
}

impl TryFrom<ModelDoc> for MlpModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        if doc.layers.len() + 1 != doc.layer_dims.len() {
            return Err(Error::Dimension(format!(
                "{} layers for layer_dims {:?}",
                doc.layers.len(),
                doc.layer_dims
            )));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (i, l) in doc.layers.into_iter().enumerate() {
            let w = Matrix::from_rows(&l.w)?;
            // An all-empty row list carries no shape, so check against the declared dims.
            if w.rows() != doc.layer_dims[i] || w.cols() != doc.layer_dims[i + 1] {
                return Err(Error::Dimension(format!(
                    "layer {i} weights are {}x{}, layer_dims say {}x{}",
                    w.rows(),
                    w.cols(),
                    doc.layer_dims[i],
                    doc.layer_dims[i + 1]
                )));
            }
            layers.push(DenseLayer { w, b: l.b });
        }
        MlpModel::from_parts(layers, doc.bn, doc.meta)
    }
}
