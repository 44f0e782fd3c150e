//! The streaming loop: per batch, learn combination weights, predict with the
//! weighted ensemble, then adapt the chosen model(s). Also the single-source
//! and uniform-ensemble baselines and the forgetting harness.
//!
//! The adaptation path ([`MetaEngine::process`]) only ever sees feature
//! matrices. Labels stay in the run drivers, which use them for error columns
//! and nothing else.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::adapters::{adapt, param_distance, snapshot, state_bits, AdapterConfig, AdapterKind};
use crate::ensemble::{
    check_compatible, combine_probs, solve_batch, BatchSolve, CombinationWeights, SolverConfig, StepBranch,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{MlpModel, NormMode};
use crate::scenario::{classification_error, held_out_test_set, LabeledBatch, Scenario, StreamBatch};

/// Which models get adapted after each batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateTarget {
    /// The model with the largest learned weight.
    #[default]
    MostCorrelated,
    /// The model with the smallest learned weight.
    LeastCorrelated,
    All,
}

impl std::str::FromStr for UpdateTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "most" => Ok(Self::MostCorrelated),
            "least" => Ok(Self::LeastCorrelated),
            "all" => Ok(Self::All),
            _ => Err(Error::InvalidParam(format!(
                "unknown update target {s:?} (expected most, least or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub adapter: AdapterConfig,
    pub solver: SolverConfig,
    pub target: UpdateTarget,
    /// Check after every batch that models outside the update set are
    /// bitwise unchanged.
    pub verify_updates: bool,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.adapter.kind != AdapterKind::None {
            self.adapter.validate()?;
        }
        Ok(())
    }
}

/// What one call to [`MetaEngine::process`] produced.
#[derive(Debug, Clone)]
pub struct BatchStep {
    pub solve: BatchSolve,
    /// `argmax(w*)`, smallest index on ties.
    pub k: usize,
    pub adapted: Vec<usize>,
}

impl BatchStep {
    pub fn w_star(&self) -> &CombinationWeights {
        &self.solve.report.w_final
    }

    /// Ensemble class probabilities, computed before any adaptation.
    pub fn prediction(&self) -> &Matrix {
        &self.solve.prediction
    }
}

/// Holds the current source models and applies one online step per batch.
#[derive(Debug, Clone)]
pub struct MetaEngine {
    models: Vec<MlpModel>,
    cfg: EngineConfig,
    t: usize,
}

impl MetaEngine {
    pub fn new(models: Vec<MlpModel>, cfg: EngineConfig) -> Result<Self> {
        check_compatible(&models)?;
        cfg.validate()?;
        Ok(Self { models, cfg, t: 0 })
    }

    pub fn models(&self) -> &[MlpModel] {
        &self.models
    }

    pub fn into_models(self) -> Vec<MlpModel> {
        self.models
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Solves for the weights on `x`, predicts, then adapts the update set.
    pub fn process(&mut self, x: &Matrix) -> Result<BatchStep> {
        let solve = solve_batch(&self.models, x, &self.cfg.solver)?;
        let w = &solve.report.w_final;
        let k = w.argmax();
        let adapted = match self.cfg.target {
            UpdateTarget::MostCorrelated => vec![k],
            UpdateTarget::LeastCorrelated => vec![w.argmin()],
            UpdateTarget::All => (0..self.models.len()).collect(),
        };
        let before: Vec<Vec<u64>> = if self.cfg.verify_updates {
            self.models.iter().map(state_bits).collect()
        } else {
            Vec::new()
        };
        for &j in &adapted {
            adapt(&mut self.models[j], x, &self.cfg.adapter)?;
        }
        if self.cfg.verify_updates {
            for (j, m) in self.models.iter().enumerate() {
                if !adapted.contains(&j) && state_bits(m) != before[j] {
                    return Err(Error::Invariant(format!(
                        "model {j} changed at batch {} but was not selected",
                        self.t
                    )));
                }
            }
        }
        debug!(
            "batch {}: w* = {:?}, k = {k}, alpha = {} ({:?})",
            self.t,
            w.as_slice(),
            solve.step.alpha,
            solve.step.branch
        );
        self.t += 1;
        Ok(BatchStep { solve, k, adapted })
    }
}

/// Fraction of rows whose argmax differs from the label.
pub fn batch_error(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::Dimension(format!(
            "{} labels for {} prediction rows",
            labels.len(),
            probs.rows()
        )));
    }
    let wrong = probs.argmax_rows().iter().zip(labels).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// MeTA's view of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaBatch {
    pub t: usize,
    pub segment: usize,
    pub pi: Vec<f64>,
    pub w_init: Vec<f64>,
    pub w_star: Vec<f64>,
    pub k: usize,
    pub adapted: Vec<usize>,
    pub alpha_best: f64,
    pub alpha_branch: StepBranch,
    pub entropy_init: f64,
    pub entropy_final: f64,
    pub meta_err: f64,
}

/// Error of each source's current state on its own held-out set, next to
/// the pristine model's error on the same set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRecord {
    /// Index of the segment after which this was measured.
    pub checkpoint: usize,
    pub source_id: usize,
    pub adapted_err: f64,
    pub pristine_err: f64,
    pub param_drift: f64,
}

impl ForgettingRecord {
    pub fn delta(&self) -> f64 {
        self.adapted_err - self.pristine_err
    }
}

/// Fixed labelled sets used to measure forgetting, one per source.
#[derive(Debug, Clone)]
pub struct HeldOut {
    pub sets: Vec<LabeledBatch>,
    pub chunk: usize,
}

pub const DEFAULT_HELD_OUT_SIZE: usize = 2000;
pub const DEFAULT_EVAL_CHUNK: usize = 128;

impl HeldOut {
    /// One set per model, drawn from the scenario domain whose id matches
    /// the model's training domain.
    pub fn for_models(models: &[MlpModel], scenario: &Scenario, n: usize, seed: u64) -> Result<Self> {
        let sets = models
            .iter()
            .map(|m| {
                let id = m.meta.domain_id;
                let domain = scenario
                    .domains
                    .iter()
                    .find(|d| d.domain_id == id)
                    .ok_or_else(|| Error::Incompatible(format!("no domain with id {id} in the scenario")))?;
                held_out_test_set(domain, n, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sets,
            chunk: DEFAULT_EVAL_CHUNK,
        })
    }
}

pub fn evaluate_forgetting(
    checkpoint: usize,
    adapted: &[MlpModel],
    pristine: &[MlpModel],
    held_out: &HeldOut,
) -> Result<Vec<ForgettingRecord>> {
    if adapted.len() != pristine.len() || adapted.len() != held_out.sets.len() {
        return Err(Error::Dimension(format!(
            "{} adapted models, {} pristine models, {} held-out sets",
            adapted.len(),
            pristine.len(),
            held_out.sets.len()
        )));
    }
    adapted
        .iter()
        .zip(pristine)
        .zip(&held_out.sets)
        .enumerate()
        .map(|(j, ((a, p), set))| {
            Ok(ForgettingRecord {
                checkpoint,
                source_id: j,
                adapted_err: classification_error(a, &set.x, &set.y, held_out.chunk)?,
                pristine_err: classification_error(p, &set.x, &set.y, held_out.chunk)?,
                param_drift: param_distance(&snapshot(a), &snapshot(p))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MetaRun {
    pub batches: Vec<MetaBatch>,
    pub forgetting: Vec<ForgettingRecord>,
    pub models: Vec<MlpModel>,
}

/// Feeds batches to a [`MetaEngine`] and scores its predictions.
struct MetaDriver<'a> {
    engine: MetaEngine,
    pristine: Vec<MlpModel>,
    held_out: Option<&'a HeldOut>,
    batches: Vec<MetaBatch>,
    forgetting: Vec<ForgettingRecord>,
}

impl<'a> MetaDriver<'a> {
    fn new(models: &[MlpModel], cfg: &EngineConfig, held_out: Option<&'a HeldOut>) -> Result<Self> {
        if let Some(h) = held_out {
            if h.sets.len() != models.len() {
                return Err(Error::Dimension(format!(
                    "{} held-out sets for {} models",
                    h.sets.len(),
                    models.len()
                )));
            }
        }
        Ok(Self {
            engine: MetaEngine::new(models.to_vec(), *cfg)?,
            pristine: models.to_vec(),
            held_out,
            batches: Vec::new(),
            forgetting: Vec::new(),
        })
    }

    fn step(&mut self, sb: &StreamBatch) -> Result<()> {
        let step = self.engine.process(&sb.batch.x)?;
        let report = &step.solve.report;
        let meta_err = batch_error(step.prediction(), &sb.batch.y)?;
        self.batches.push(MetaBatch {
            t: sb.t,
            segment: sb.segment,
            pi: sb.pi.clone(),
            w_init: report.w_init.as_slice().to_vec(),
            w_star: report.w_final.as_slice().to_vec(),
            k: step.k,
            adapted: step.adapted.clone(),
            alpha_best: report.alpha_best,
            alpha_branch: step.solve.step.branch,
            entropy_init: report.losses[0],
            entropy_final: *report.losses.last().expect("losses never empty"),
            meta_err,
        });
        Ok(())
    }

    fn checkpoint(&mut self, segment: usize) -> Result<()> {
        if let Some(h) = self.held_out {
            let recs = evaluate_forgetting(segment, self.engine.models(), &self.pristine, h)?;
            let mean: f64 = recs.iter().map(|r| r.delta()).sum::<f64>() / recs.len() as f64;
            info!("after segment {segment}: mean own-domain error change {mean:+.4}");
            self.forgetting.extend(recs);
        }
        Ok(())
    }

    fn finish(self) -> MetaRun {
        MetaRun {
            batches: self.batches,
            forgetting: self.forgetting,
            models: self.engine.into_models(),
        }
    }
}

/// Per-batch errors of every source, each adapted independently on every batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleSourceBatch {
    pub t: usize,
    pub errs: Vec<f64>,
    pub best: f64,
    pub worst: f64,
}

#[derive(Debug, Clone)]
pub struct SingleSourceRun {
    pub batches: Vec<SingleSourceBatch>,
    pub models: Vec<MlpModel>,
}

struct SingleSourceDriver {
    models: Vec<MlpModel>,
    adapter: AdapterConfig,
    batches: Vec<SingleSourceBatch>,
}

impl SingleSourceDriver {
    fn new(models: &[MlpModel], adapter: &AdapterConfig) -> Result<Self> {
        check_compatible(models)?;
        if adapter.kind != AdapterKind::None {
            adapter.validate()?;
        }
        Ok(Self {
            models: models.to_vec(),
            adapter: *adapter,
            batches: Vec::new(),
        })
    }

    fn step(&mut self, sb: &StreamBatch) -> Result<()> {
        let x = &sb.batch.x;
        let mut errs = Vec::with_capacity(self.models.len());
        for m in &mut self.models {
            let p = m.predict_proba(x, NormMode::BatchStats)?;
            errs.push(batch_error(&p, &sb.batch.y)?);
            adapt(m, x, &self.adapter)?;
        }
        let best = errs.iter().copied().fold(f64::INFINITY, f64::min);
        let worst = errs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.batches.push(SingleSourceBatch {
            t: sb.t,
            errs,
            best,
            worst,
        });
        Ok(())
    }
}

/// Frozen models combined with equal weights.
struct UniformDriver {
    models: Vec<MlpModel>,
    w: CombinationWeights,
    errs: Vec<f64>,
}

impl UniformDriver {
    fn new(models: &[MlpModel]) -> Result<Self> {
        check_compatible(models)?;
        Ok(Self {
            models: models.to_vec(),
            w: CombinationWeights::uniform(models.len())?,
            errs: Vec::new(),
        })
    }

    fn step(&mut self, sb: &StreamBatch) -> Result<()> {
        let probs = self
            .models
            .iter()
            .map(|m| m.predict_proba(&sb.batch.x, NormMode::BatchStats))
            .collect::<Result<Vec<_>>>()?;
        let p = combine_probs(&probs, &self.w)?;
        self.errs.push(batch_error(&p, &sb.batch.y)?);
        Ok(())
    }
}

fn for_each_batch<I>(stream: I, mut f: impl FnMut(&StreamBatch, bool) -> Result<()>) -> Result<()>
where
    I: IntoIterator<Item = Result<StreamBatch>>,
{
    let mut stream = stream.into_iter().peekable();
    let mut seen = false;
    while let Some(sb) = stream.next() {
        let sb = sb?;
        seen = true;
        // A segment ends at the last batch or where the next segment starts.
        let seg_end = match stream.peek() {
            None => true,
            Some(Ok(next)) => next.segment != sb.segment,
            Some(Err(_)) => false,
        };
        f(&sb, seg_end)?;
    }
    if !seen {
        return Err(Error::EmptyScript);
    }
    Ok(())
}

fn scenario_stream(scenario: &Scenario) -> Result<impl Iterator<Item = Result<StreamBatch>> + '_> {
    scenario.validate()?;
    Ok(scenario.stream())
}

/// Runs the online loop over the whole scenario stream. With `held_out`,
/// forgetting is measured after every segment.
pub fn run_meta(
    models: &[MlpModel],
    scenario: &Scenario,
    cfg: &EngineConfig,
    held_out: Option<&HeldOut>,
) -> Result<MetaRun> {
    let mut d = MetaDriver::new(models, cfg, held_out)?;
    for_each_batch(scenario_stream(scenario)?, |sb, seg_end| {
        d.step(sb)?;
        if seg_end {
            d.checkpoint(sb.segment)?;
        }
        Ok(())
    })?;
    Ok(d.finish())
}

/// [`run_meta`] with a different update set.
pub fn run_update_ablation(
    models: &[MlpModel],
    scenario: &Scenario,
    cfg: &EngineConfig,
    target: UpdateTarget,
    held_out: Option<&HeldOut>,
) -> Result<MetaRun> {
    let cfg = EngineConfig { target, ..*cfg };
    run_meta(models, scenario, &cfg, held_out)
}

pub fn run_single_source_baseline(
    models: &[MlpModel],
    scenario: &Scenario,
    adapter: &AdapterConfig,
) -> Result<SingleSourceRun> {
    let mut d = SingleSourceDriver::new(models, adapter)?;
    for_each_batch(scenario_stream(scenario)?, |sb, _| d.step(sb))?;
    Ok(SingleSourceRun {
        batches: d.batches,
        models: d.models,
    })
}

/// Per-batch error of the equal-weight ensemble of the frozen models.
pub fn run_uniform_ensemble(models: &[MlpModel], scenario: &Scenario) -> Result<Vec<f64>> {
    let mut d = UniformDriver::new(models)?;
    for_each_batch(scenario_stream(scenario)?, |sb, _| d.step(sb))?;
    Ok(d.errs)
}

/// One row of the per-batch output.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub t: usize,
    pub segment: usize,
    pub pi: Vec<f64>,
    pub w_init: Vec<f64>,
    pub w_star: Vec<f64>,
    pub k: usize,
    pub alpha_best: f64,
    pub entropy_init: f64,
    pub entropy_final: f64,
    pub meta_err: f64,
    pub src_errs: Vec<f64>,
    pub best_err: f64,
    pub worst_err: f64,
    pub uniform_err: f64,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub records: Vec<BatchRecord>,
    pub forgetting: Vec<ForgettingRecord>,
    /// Model states after the MeTA run.
    pub models: Vec<MlpModel>,
}

/// MeTA, the independently adapted single sources and the uniform ensemble
/// side by side over one pass of the stream.
pub fn run_experiment(
    models: &[MlpModel],
    scenario: &Scenario,
    cfg: &EngineConfig,
    held_out: Option<&HeldOut>,
) -> Result<Experiment> {
    run_experiment_on(models, scenario_stream(scenario)?, cfg, held_out)
}

/// [`run_experiment`] over an explicit batch stream. Segments end where the
/// `segment` field changes.
pub fn run_experiment_on<I>(
    models: &[MlpModel],
    stream: I,
    cfg: &EngineConfig,
    held_out: Option<&HeldOut>,
) -> Result<Experiment>
where
    I: IntoIterator<Item = Result<StreamBatch>>,
{
    let mut meta = MetaDriver::new(models, cfg, held_out)?;
    let mut single = SingleSourceDriver::new(models, &cfg.adapter)?;
    let mut uniform = UniformDriver::new(models)?;
    for_each_batch(stream, |sb, seg_end| {
        meta.step(sb)?;
        single.step(sb)?;
        uniform.step(sb)?;
        if seg_end {
            meta.checkpoint(sb.segment)?;
        }
        Ok(())
    })?;
    let uniform_errs = uniform.errs;
    let single = single.batches;
    let run = meta.finish();
    let records = run
        .batches
        .into_iter()
        .zip(single)
        .zip(uniform_errs)
        .map(|((m, s), u)| BatchRecord {
            t: m.t,
            segment: m.segment,
            pi: m.pi,
            w_init: m.w_init,
            w_star: m.w_star,
            k: m.k,
            alpha_best: m.alpha_best,
            entropy_init: m.entropy_init,
            entropy_final: m.entropy_final,
            meta_err: m.meta_err,
            src_errs: s.errs,
            best_err: s.best,
            worst_err: s.worst,
            uniform_err: u,
        })
        .collect();
    Ok(Experiment {
        records,
        forgetting: run.forgetting,
        models: run.models,
    })
}
