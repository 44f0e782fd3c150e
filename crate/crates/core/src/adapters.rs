//! Single-model test-time adaptation: entropy minimisation over the BN affine
//! parameters, and a running-statistics refresh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{flatten_bn, MlpModel, NormMode, ParamSet, BN_MOMENTUM, EPS_LOG};
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Tent,
    BnStats,
    None,
}

impl std::str::FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tent" => Ok(Self::Tent),
            "bn_stats" | "bnstats" => Ok(Self::BnStats),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidParam(format!(
                "unknown adapter {s:?} (expected tent, bn_stats or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    pub lr: f64,
    pub steps: usize,
    pub optimizer: Optimizer,
    pub bn_momentum: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            kind: AdapterKind::Tent,
            lr: 1e-3,
            steps: 1,
            optimizer: Optimizer::Adam,
            bn_momentum: BN_MOMENTUM,
        }
    }
}

impl AdapterConfig {
    pub fn none() -> Self {
        Self {
            kind: AdapterKind::None,
            ..Self::default()
        }
    }

    pub fn bn_stats(momentum: f64) -> Self {
        Self {
            kind: AdapterKind::BnStats,
            bn_momentum: momentum,
            ..Self::default()
        }
    }

    /// Checks the ranges a configuration file may use.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParam(format!(
                "adapter lr must be positive, got {}",
                self.lr
            )));
        }
        if self.kind == AdapterKind::Tent && self.steps == 0 {
            return Err(Error::InvalidParam("tent needs at least one step".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "bn_momentum must lie in (0, 1], got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }
}

fn check_batch(x: &Matrix) -> Result<()> {
    if x.rows() < 2 {
        return Err(Error::BatchTooSmall(x.rows()));
    }
    Ok(())
}

/// `cfg.steps` optimizer steps on the mean prediction entropy of `x`, moving
/// only the BN γ and β. Adam state starts fresh on every call.
pub fn tent_adapt(model: &mut MlpModel, x: &Matrix, cfg: &AdapterConfig) -> Result<()> {
    check_batch(x)?;
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::InvalidParam(format!("adapter lr must be ≥ 0, got {}", cfg.lr)));
    }
    let mut params = model.params(ParamSet::BnAffine);
    let mut adam = AdamState::new(params.len());
    for _ in 0..cfg.steps {
        let (_, grads) = model.grad_bn_affine(x, EPS_LOG)?;
        let g = flatten_bn(&grads);
        match cfg.optimizer {
            Optimizer::Sgd => sgd_step(&mut params, &g, cfg.lr)?,
            Optimizer::Adam => adam_step(&mut adam, &mut params, &g, cfg.lr, AdamConfig::default())?,
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged("tent produced non-finite BN parameters".into()));
        }
        model.set_params(ParamSet::BnAffine, &params)?;
    }
    Ok(())
}

/// `running ← (1 − m)·running + m·observed` for every BN layer, using the
/// batch moments of `x`.
pub fn bn_stats_adapt(model: &mut MlpModel, x: &Matrix, cfg: &AdapterConfig) -> Result<()> {
    check_batch(x)?;
    let m = cfg.bn_momentum;
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidParam(format!("bn_momentum must lie in [0, 1], got {m}")));
    }
    if m == 0.0 {
        return Ok(());
    }
    let trace = model.forward(x, NormMode::BatchStats)?;
    model.blend_running_stats(&trace.bn_stats, Some(m))
}

/// Applies whichever adapter `cfg` names.
pub fn adapt(model: &mut MlpModel, x: &Matrix, cfg: &AdapterConfig) -> Result<()> {
    match cfg.kind {
        AdapterKind::Tent => tent_adapt(model, x, cfg),
        AdapterKind::BnStats => bn_stats_adapt(model, x, cfg),
        AdapterKind::None => check_batch(x),
    }
}

/// The adaptable state of a model: BN γ, β, running means and variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    layer_dims: Vec<usize>,
    values: Vec<f64>,
}

impl Snapshot {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn snapshot(model: &MlpModel) -> Snapshot {
    let mut values = Vec::new();
    for bn in &model.bn {
        values.extend_from_slice(&bn.gamma);
        values.extend_from_slice(&bn.beta);
        values.extend_from_slice(&bn.running_mean);
        values.extend_from_slice(&bn.running_var);
    }
    Snapshot {
        layer_dims: model.layer_dims().to_vec(),
        values,
    }
}

/// Euclidean distance between two snapshots.
pub fn param_distance(a: &Snapshot, b: &Snapshot) -> Result<f64> {
    if a.layer_dims != b.layer_dims || a.values.len() != b.values.len() {
        return Err(Error::Incompatible(format!(
            "snapshots of {:?} and {:?}",
            a.layer_dims, b.layer_dims
        )));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Every stored number of a model as raw bits, for exact comparisons.
pub fn state_bits(model: &MlpModel) -> Vec<u64> {
    let mut out = Vec::new();
    for l in &model.layers {
        out.extend(l.w.as_slice().iter().map(|v| v.to_bits()));
        out.extend(l.b.iter().map(|v| v.to_bits()));
    }
    for bn in &model.bn {
        for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
            out.extend(v.iter().map(|x| x.to_bits()));
        }
        out.push(bn.eps.to_bits());
        out.push(bn.momentum.to_bits());
    }
    out
}
