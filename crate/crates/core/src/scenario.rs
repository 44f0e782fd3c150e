//! Synthetic source domains, mixture sampling, source training and held-out sets.
//!
//! Every domain shares one set of class prototypes. A domain rotates the
//! prototypes by the same angle in each consecutive coordinate pair
//! `(0,1), (2,3), …`, adds its own shift and draws isotropic Gaussian noise
//! around the result. With an odd dimension the last coordinate is only shifted.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::ParamSet;
use crate::nn::{MlpModel, NormMode};
use crate::optim::sgd_step;
use crate::seed::{derive_seed, rng_for, Purpose};

/// Knobs for [`make_domain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Radians, applied in every consecutive coordinate pair.
    pub rotation_angle: f64,
    pub noise_scale: f64,
    /// Standard deviation of the per-domain shift.
    pub shift_scale: f64,
    /// Standard deviation of the shared class prototypes.
    pub mean_scale: f64,
}

impl Default for DomainParams {
    fn default() -> Self {
        Self {
            num_classes: 5,
            input_dim: 16,
            rotation_angle: 0.0,
            noise_scale: DEFAULT_NOISE_SCALE,
            shift_scale: 1.0,
            mean_scale: 3.0,
        }
    }
}

pub const DEFAULT_NOISE_SCALE: f64 = 0.6;
/// Noise level at which source models make measurable own-domain errors
/// (around 1%); at the default level they make none.
pub const HARD_NOISE_SCALE: f64 = 2.0;
pub const DEFAULT_ANGLES_DEG: [f64; 4] = [0.0, 25.0, 50.0, 75.0];
pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: usize,
    /// Shared class prototypes, before this domain's rotation and shift.
    pub class_means: Vec<Vec<f64>>,
    pub rotation_angle: f64,
    pub shift: Vec<f64>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl DomainSpec {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn input_dim(&self) -> usize {
        self.shift.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let d = self.input_dim();
        if k < 2 {
            return Err(Error::InvalidParam(format!("need at least 2 classes, got {k}")));
        }
        if d < 2 {
            return Err(Error::InvalidParam(format!("need at least 2 input dims, got {d}")));
        }
        if !(self.noise_scale > 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidParam(format!(
                "noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        if !self.rotation_angle.is_finite() || self.shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite domain transform".into()));
        }
        for (c, m) in self.class_means.iter().enumerate() {
            if m.len() != d {
                return Err(Error::Dimension(format!("class mean {c} has length {}", m.len())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam(format!("class mean {c} is not finite")));
            }
        }
        for a in 0..k {
            for b in a + 1..k {
                if self.class_means[a] == self.class_means[b] {
                    return Err(Error::InvalidParam(format!("class means {a} and {b} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Applies the domain's rotation and shift to a prototype.
    pub fn transform(&self, p: &[f64]) -> Vec<f64> {
        let (s, c) = self.rotation_angle.sin_cos();
        let mut out: Vec<f64> = p.iter().zip(&self.shift).map(|(a, b)| a + b).collect();
        for k in (0..p.len() - 1).step_by(2) {
            out[k] = c * p[k] - s * p[k + 1] + self.shift[k];
            out[k + 1] = s * p[k] + c * p[k + 1] + self.shift[k + 1];
        }
        out
    }

    /// Class-conditional means of this domain, i.e. transformed prototypes.
    pub fn effective_class_means(&self) -> Vec<Vec<f64>> {
        self.class_means.iter().map(|m| self.transform(m)).collect()
    }
}

/// Builds domain `domain_id`. Class prototypes depend only on `base_seed`;
/// the shift depends on `(base_seed, domain_id)`.
pub fn make_domain(base_seed: u64, domain_id: usize, params: &DomainParams) -> Result<DomainSpec> {
    if params.num_classes < 2 || params.input_dim < 2 {
        return Err(Error::InvalidParam(format!(
            "need K ≥ 2 and d_in ≥ 2, got K={} d_in={}",
            params.num_classes, params.input_dim
        )));
    }
    if !(params.shift_scale >= 0.0) || !(params.mean_scale > 0.0) {
        return Err(Error::InvalidParam("shift_scale must be ≥ 0 and mean_scale > 0".into()));
    }
    let mut rng = rng_for(base_seed, Purpose::ClassMeans, 0);
    let class_means = (0..params.num_classes)
        .map(|_| gaussian_vec(&mut rng, params.input_dim, params.mean_scale))
        .collect();
    let mut rng = rng_for(base_seed, Purpose::Shift, domain_id as u64);
    let shift = gaussian_vec(&mut rng, params.input_dim, params.shift_scale);
    let spec = DomainSpec {
        domain_id,
        class_means,
        rotation_angle: params.rotation_angle,
        shift,
        noise_scale: params.noise_scale,
        seed: base_seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// The default four related domains at rotations 0°, 25°, 50° and 75°.
pub fn default_domains(base_seed: u64) -> Result<Vec<DomainSpec>> {
    domains_with_noise(base_seed, DEFAULT_NOISE_SCALE)
}

/// The default four domains with a different noise level.
pub fn domains_with_noise(base_seed: u64, noise_scale: f64) -> Result<Vec<DomainSpec>> {
    DEFAULT_ANGLES_DEG
        .iter()
        .enumerate()
        .map(|(j, deg)| {
            let params = DomainParams {
                rotation_angle: deg.to_radians(),
                noise_scale,
                ..DomainParams::default()
            };
            make_domain(base_seed, j, &params)
        })
        .collect()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Mixing proportions over a list of domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixtureSpec {
    pi: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidParam("empty mixture".into()));
        }
        if pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParam(format!("mixture {pi:?} has negative entries")));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!("mixture {pi:?} sums to {sum}")));
        }
        Ok(Self { pi })
    }

    pub fn one_hot(n: usize, j: usize) -> Result<Self> {
        if j >= n {
            return Err(Error::InvalidParam(format!("component {j} of {n}")));
        }
        let mut pi = vec![0.0; n];
        pi[j] = 1.0;
        Self::new(pi)
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in self.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // Rounding left u above the final partial sum; use the last nonzero component.
        self.pi.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl TryFrom<Vec<f64>> for MixtureSpec {
    type Error = Error;

    fn try_from(pi: Vec<f64>) -> Result<Self> {
        Self::new(pi)
    }
}

impl From<MixtureSpec> for Vec<f64> {
    fn from(m: MixtureSpec) -> Self {
        m.pi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub y: Vec<usize>,
    /// Domain each sample was drawn from.
    pub provenance: Vec<usize>,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// What to sample from.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    Domain(&'a DomainSpec),
    Mixture(&'a [DomainSpec], &'a MixtureSpec),
}

fn check_compatible(domains: &[DomainSpec]) -> Result<()> {
    let first = domains
        .first()
        .ok_or_else(|| Error::InvalidParam("no domains".into()))?;
    for d in domains {
        d.validate()?;
        if d.num_classes() != first.num_classes() || d.input_dim() != first.input_dim() {
            return Err(Error::Incompatible(format!(
                "domain {} differs in K or d_in from domain {}",
                d.domain_id, first.domain_id
            )));
        }
    }
    Ok(())
}

fn sample_with(rng: &mut ChaCha8Rng, source: Source<'_>, n: usize) -> Result<LabeledBatch> {
    let (domains, mixture): (&[DomainSpec], Option<&MixtureSpec>) = match source {
        Source::Domain(d) => (std::slice::from_ref(d), None),
        Source::Mixture(ds, m) => {
            if m.len() != ds.len() {
                return Err(Error::Dimension(format!(
                    "mixture over {} components for {} domains",
                    m.len(),
                    ds.len()
                )));
            }
            (ds, Some(m))
        }
    };
    check_compatible(domains)?;
    let k = domains[0].num_classes();
    let d = domains[0].input_dim();
    let effective: Vec<Vec<Vec<f64>>> = domains.iter().map(|s| s.effective_class_means()).collect();

    let mut data = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for _ in 0..n {
        let j = mixture.map_or(0, |m| m.draw(rng));
        let c = rng.random_range(0..k);
        let noise = domains[j].noise_scale;
        for &mu in &effective[j][c] {
            let z: f64 = StandardNormal.sample(rng);
            data.push(mu + noise * z);
        }
        y.push(c);
        provenance.push(domains[j].domain_id);
    }
    Ok(LabeledBatch {
        x: Matrix::from_vec(n, d, data)?,
        y,
        provenance,
    })
}

/// Draws `b` labelled samples. For a mixture each sample first picks a domain
/// from `pi`, then a uniform class, then a noisy point.
pub fn sample_batch(source: Source<'_>, b: usize, seed: u64) -> Result<LabeledBatch> {
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let mut rng = rng_for(seed, Purpose::Sample, 0);
    sample_with(&mut rng, source, b)
}

/// A fixed labelled set from a single domain, on a seed stream disjoint from
/// training and stream sampling.
pub fn held_out_test_set(domain: &DomainSpec, n: usize, seed: u64) -> Result<LabeledBatch> {
    if n < domain.num_classes() {
        return Err(Error::InvalidParam(format!(
            "held-out set of {n} is smaller than K={}",
            domain.num_classes()
        )));
    }
    let mut rng = rng_for(seed, Purpose::HeldOut, domain.domain_id as u64);
    sample_with(&mut rng, Source::Domain(domain), n)
}

/// Fraction of misclassified rows, predicting chunk by chunk with
/// BatchStats normalization. A trailing chunk with fewer than 2 rows is
/// folded into the previous one.
pub fn classification_error(model: &MlpModel, x: &Matrix, y: &[usize], chunk: usize) -> Result<f64> {
    if x.rows() != y.len() {
        return Err(Error::Dimension(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let mut wrong = 0usize;
    for range in chunk_ranges(x.rows(), chunk)? {
        let idx: Vec<usize> = range.clone().collect();
        let p = model.predict_proba(&x.select_rows(&idx), NormMode::BatchStats)?;
        wrong += p.argmax_rows().iter().zip(&y[range]).filter(|(a, b)| a != b).count();
    }
    Ok(wrong as f64 / y.len() as f64)
}

/// Splits `0..n` into consecutive ranges of `chunk` rows, never leaving a
/// single-row tail.
pub fn chunk_ranges(n: usize, chunk: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if n < 2 || chunk < 2 {
        return Err(Error::BatchTooSmall(n.min(chunk)));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + chunk).min(n);
        if n - end == 1 {
            end = n;
        }
        out.push(start..end);
        start = end;
    }
    Ok(out)
}

/// Source-model training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub train_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub eval_samples: usize,
    pub eval_chunk: usize,
    /// Trains on `perm[y]` instead of `y`; produces a deliberately corrupted source.
    pub label_permutation: Option<Vec<usize>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            train_samples: 4000,
            epochs: 8,
            batch_size: 64,
            lr: 0.05,
            seed: 0,
            eval_samples: 2000,
            eval_chunk: DEFAULT_BATCH_SIZE,
            label_permutation: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self, k: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.train_samples < 2 {
            return Err(Error::InvalidParam(
                "training needs epochs ≥ 1, batch_size ≥ 2 and train_samples ≥ 2".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam(format!("lr must be positive, got {}", self.lr)));
        }
        if let Some(p) = &self.label_permutation {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (0..k).collect::<Vec<_>>() {
                return Err(Error::InvalidParam(format!("{p:?} is not a permutation of 0..{k}")));
            }
        }
        Ok(())
    }
}

/// Trains a `[d_in, hidden.., K]` classifier on one domain with mini-batch
/// SGD on cross-entropy (BatchStats normalization, running statistics
/// accumulated by EMA). `meta.train_err` holds the error on a fresh
/// `eval_samples` set against the true labels.
pub fn train_source(domain: &DomainSpec, cfg: &TrainConfig) -> Result<MlpModel> {
    domain.validate()?;
    let k = domain.num_classes();
    cfg.validate(k)?;
    let id = domain.domain_id as u64;

    let mut dims = vec![domain.input_dim()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(k);
    let mut model = MlpModel::new(&dims, derive_seed(cfg.seed, Purpose::ModelInit, id), domain.domain_id)?;
    model.meta.seed = cfg.seed;

    let mut rng = rng_for(cfg.seed, Purpose::TrainData, id);
    let mut data = sample_with(&mut rng, Source::Domain(domain), cfg.train_samples)?;
    if let Some(perm) = &cfg.label_permutation {
        for y in &mut data.y {
            *y = perm[*y];
        }
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng_for(cfg.seed, Purpose::TrainShuffle, id);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for range in chunk_ranges(order.len(), cfg.batch_size)? {
            let idx = &order[range];
            let x = data.x.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
            let (loss, grads, trace) = model.grad_full(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} in epoch {epoch}")));
            }
            let mut params = model.params(ParamSet::All);
            sgd_step(&mut params, &grads.flatten(ParamSet::All), cfg.lr)?;
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged(format!("non-finite parameters in epoch {epoch}")));
            }
            model.set_params(ParamSet::All, &params)?;
            model.blend_running_stats(&trace.bn_stats, None)?;
        }
    }

    let mut rng = rng_for(cfg.seed, Purpose::TrainEval, id);
    let eval = sample_with(&mut rng, Source::Domain(domain), cfg.eval_samples.max(2))?;
    model.meta.train_err = Some(classification_error(&model, &eval.x, &eval.y, cfg.eval_chunk)?);
    Ok(model)
}

/// One stretch of the stream with a fixed mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub pi: MixtureSpec,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub segments: Vec<Segment>,
}

impl ScenarioScript {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let s = Self { segments };
        s.validate()?;
        Ok(s)
    }

    pub fn stationary(pi: MixtureSpec, batches: usize) -> Result<Self> {
        Self::new(vec![Segment { pi, batches }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::EmptyScript);
        }
        let n = self.segments[0].pi.len();
        for (i, s) in self.segments.iter().enumerate() {
            if s.batches == 0 {
                return Err(Error::InvalidParam(format!("segment {i} has no batches")));
            }
            if s.pi.len() != n {
                return Err(Error::Dimension(format!(
                    "segment {i} mixes {} domains, not {n}",
                    s.pi.len()
                )));
            }
        }
        Ok(())
    }

    pub fn is_stationary(&self) -> bool {
        self.segments.len() == 1
    }

    pub fn total_batches(&self) -> usize {
        self.segments.iter().map(|s| s.batches).sum()
    }
}

/// Domains, script, batch size and stream seed; the scenario file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub domains: Vec<DomainSpec>,
    pub segments: Vec<Segment>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

/// One test batch of the stream.
#[derive(Debug, Clone)]
pub struct StreamBatch {
    pub t: usize,
    pub segment: usize,
    pub pi: Vec<f64>,
    pub batch: LabeledBatch,
}

impl Scenario {
    pub fn new(domains: Vec<DomainSpec>, script: ScenarioScript, batch_size: usize, seed: u64) -> Result<Self> {
        let s = Self {
            domains,
            segments: script.segments,
            batch_size,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_compatible(&self.domains)?;
        self.script().validate()?;
        if self.segments[0].pi.len() != self.domains.len() {
            return Err(Error::Dimension(format!(
                "segments mix {} domains but {} are defined",
                self.segments[0].pi.len(),
                self.domains.len()
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        Ok(())
    }

    pub fn script(&self) -> ScenarioScript {
        ScenarioScript {
            segments: self.segments.clone(),
        }
    }

    pub fn total_batches(&self) -> usize {
        self.segments.iter().map(|s| s.batches).sum()
    }

    /// The labelled stream, batch by batch. Batch `t` depends only on
    /// `(seed, t)` and its segment's mixture.
    pub fn stream(&self) -> impl Iterator<Item = Result<StreamBatch>> + '_ {
        self.segments
            .iter()
            .enumerate()
            .flat_map(|(s, seg)| std::iter::repeat_n((s, seg), seg.batches))
            .enumerate()
            .map(move |(t, (s, seg))| {
                let seed = derive_seed(self.seed, Purpose::StreamBatch, t as u64);
                let batch = sample_batch(Source::Mixture(&self.domains, &seg.pi), self.batch_size, seed)?;
                Ok(StreamBatch {
                    t,
                    segment: s,
                    pi: seg.pi.pi().to_vec(),
                    batch,
                })
            })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }
}

/// Pure domain 0, then an even mix of all domains, then pure domain 2
/// (falls back to the last domain when fewer exist).
pub fn default_drifting_script(n_domains: usize, batches_per_segment: usize) -> Result<ScenarioScript> {
    let last = 2.min(n_domains.saturating_sub(1));
    ScenarioScript::new(vec![
        Segment {
            pi: MixtureSpec::one_hot(n_domains, 0)?,
            batches: batches_per_segment,
        },
        Segment {
            pi: MixtureSpec::new(vec![1.0 / n_domains as f64; n_domains])?,
            batches: batches_per_segment,
        },
        Segment {
            pi: MixtureSpec::one_hot(n_domains, last)?,
            batches: batches_per_segment,
        },
    ])
}

/// Derived per-source training seed.
pub fn source_train_seed(base_seed: u64, j: usize) -> u64 {
    derive_seed(base_seed, Purpose::Derived, j as u64)
}

/// Trains one source per domain, source `j` with [`source_train_seed`]`(base_seed, j)`.
pub fn train_sources(domains: &[DomainSpec], base_seed: u64, cfg: &TrainConfig) -> Result<Vec<MlpModel>> {
    domains
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let cfg = TrainConfig {
                seed: source_train_seed(base_seed, j),
                ..cfg.clone()
            };
            train_source(d, &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_domain_is_deterministic() {
        let p = DomainParams::default();
        assert_eq!(make_domain(3, 1, &p).unwrap(), make_domain(3, 1, &p).unwrap());
    }

    #[test]
    fn identity_domain_leaves_prototypes_alone() {
        let p = DomainParams {
            rotation_angle: 0.0,
            shift_scale: 0.0,
            noise_scale: 1.0,
            ..DomainParams::default()
        };
        let d = make_domain(5, 0, &p).unwrap();
        assert_eq!(d.effective_class_means(), d.class_means);
        assert!(d.shift.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn domain_id_enters_the_derivation() {
        let p = DomainParams::default();
        let a = make_domain(5, 0, &p).unwrap();
        let b = make_domain(5, 1, &p).unwrap();
        assert_ne!(a.effective_class_means(), b.effective_class_means());
        assert_ne!(a.shift, b.shift);
        // Prototypes are shared across domains.
        assert_eq!(a.class_means, b.class_means);
    }

    #[test]
    fn invalid_domains_rejected() {
        let bad = DomainParams {
            num_classes: 1,
            ..DomainParams::default()
        };
        assert!(make_domain(0, 0, &bad).is_err());
        let mut d = make_domain(0, 0, &DomainParams::default()).unwrap();
        d.noise_scale = 0.0;
        assert!(d.validate().is_err());
        d.noise_scale = 1.0;
        d.class_means[1] = d.class_means[0].clone();
        assert!(d.validate().is_err());
    }

    #[test]
    fn rotation_acts_on_every_pair() {
        let params = DomainParams {
            input_dim: 5,
            ..DomainParams::default()
        };
        let mut d = make_domain(0, 0, &params).unwrap();
        d.shift = vec![0.0; d.input_dim()];
        d.rotation_angle = std::f64::consts::FRAC_PI_2;
        let m = d.class_means[0].clone();
        let p = d.transform(&m);
        for k in [0, 2] {
            assert!((p[k] + m[k + 1]).abs() < 1e-12);
            assert!((p[k + 1] - m[k]).abs() < 1e-12);
        }
        // odd trailing coordinate is left alone
        assert_eq!(p[4], m[4]);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!((norm(&p) - norm(&m)).abs() < 1e-9);
    }

    #[test]
    fn one_hot_mixture_has_single_provenance() {
        let ds = default_domains(1).unwrap();
        let pi = MixtureSpec::one_hot(ds.len(), 2).unwrap();
        let b = sample_batch(Source::Mixture(&ds, &pi), 64, 9).unwrap();
        assert!(b.provenance.iter().all(|&p| p == 2));
    }

    #[test]
    fn sampling_is_deterministic_and_checks_batch_size() {
        let ds = default_domains(1).unwrap();
        let a = sample_batch(Source::Domain(&ds[0]), 32, 4).unwrap();
        let b = sample_batch(Source::Domain(&ds[0]), 32, 4).unwrap();
        assert_eq!(a, b);
        assert!(sample_batch(Source::Domain(&ds[0]), 1, 4).is_err());
        assert!(a.y.iter().all(|&y| y < 5));
    }

    #[test]
    fn mixture_validation() {
        assert!(MixtureSpec::new(vec![0.5, 0.6]).is_err());
        assert!(MixtureSpec::new(vec![-0.1, 1.1]).is_err());
        assert!(MixtureSpec::new(vec![0.25; 4]).is_ok());
        let json = serde_json::to_string(&MixtureSpec::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(json, "[0.5,0.5]");
        assert!(serde_json::from_str::<MixtureSpec>("[0.2,0.2]").is_err());
    }

    #[test]
    fn held_out_sets_are_fixed() {
        let ds = default_domains(1).unwrap();
        let a = held_out_test_set(&ds[1], 100, 3).unwrap();
        assert_eq!(a, held_out_test_set(&ds[1], 100, 3).unwrap());
        assert_ne!(a, sample_batch(Source::Domain(&ds[1]), 100, 3).unwrap());
        assert!(held_out_test_set(&ds[1], 4, 3).is_err());
    }

    #[test]
    fn chunking_never_leaves_single_row() {
        let r = chunk_ranges(2000, 128).unwrap();
        assert_eq!(r.len(), 16);
        assert_eq!(r.last().unwrap().len(), 80);
        let r = chunk_ranges(129, 128).unwrap();
        assert_eq!(r, vec![0..129]);
        assert!(chunk_ranges(1, 128).is_err());
    }

    #[test]
    fn script_validation() {
        assert!(matches!(ScenarioScript::new(vec![]), Err(Error::EmptyScript)));
        let pi = MixtureSpec::one_hot(2, 0).unwrap();
        assert!(ScenarioScript::stationary(pi.clone(), 0).is_err());
        let s = ScenarioScript::stationary(pi, 3).unwrap();
        assert!(s.is_stationary());
        assert_eq!(default_drifting_script(4, 20).unwrap().total_batches(), 60);
    }

    #[test]
    fn stream_is_reproducible_and_labels_segments() {
        let ds = default_domains(2).unwrap();
        let sc = Scenario::new(ds, default_drifting_script(4, 2).unwrap(), 16, 11).unwrap();
        let a: Vec<StreamBatch> = sc.stream().collect::<Result<_>>().unwrap();
        let b: Vec<StreamBatch> = sc.stream().collect::<Result<_>>().unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.iter().map(|s| s.segment).collect::<Vec<_>>(), vec![0, 0, 1, 1, 2, 2]);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.batch, y.batch);
        }
        assert!(a[0].batch.provenance.iter().all(|&p| p == 0));
        assert!(a[5].batch.provenance.iter().all(|&p| p == 2));
        let json = sc.to_json().unwrap();
        assert_eq!(Scenario::from_json(&json).unwrap(), sc);
    }
}
