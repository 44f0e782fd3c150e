//! The JSON run configuration and its command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use meta_tta::adapters::{AdapterConfig, AdapterKind};
use meta_tta::engine::{EngineConfig, UpdateTarget, DEFAULT_HELD_OUT_SIZE};
use meta_tta::ensemble::{Projection, SolverConfig};
use meta_tta::scenario::{
    default_drifting_script, domains_with_noise, Scenario, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_NOISE_SCALE,
};
use meta_tta::seed::{derive_seed, Purpose};

use crate::exit::{Failure, Outcome};

/// Where the scenario comes from: inline, a file, or generated from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Path(PathBuf),
    Inline(Box<Scenario>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Missing means the default four-domain drifting scenario.
    pub scenario: Option<ScenarioRef>,
    /// Only used by the generated scenario.
    pub noise_scale: f64,
    pub batches_per_segment: usize,
    pub batch_size: usize,

    pub train: TrainConfig,
    pub adapter: AdapterConfig,
    pub solver: SolverConfig,
    pub seed: u64,
    pub out: PathBuf,
    /// Defaults to `<out>/models`.
    pub models_dir: Option<PathBuf>,
    pub held_out_size: usize,
    /// Checks after every batch that only the chosen models changed.
    pub verify_updates: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            noise_scale: DEFAULT_NOISE_SCALE,
            batches_per_segment: 20,
            batch_size: DEFAULT_BATCH_SIZE,
            train: TrainConfig::default(),
            adapter: AdapterConfig::default(),
            solver: SolverConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
            models_dir: None,
            held_out_size: DEFAULT_HELD_OUT_SIZE,
            verify_updates: false,
        }
    }
}

/// Flag values that replace config fields.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub adapter: Option<AdapterKind>,
    pub iters: Option<usize>,
    pub projection: Option<Projection>,
}

impl RunConfig {
    /// Reads `path`, or starts from the defaults when there is none. Relative
    /// scenario paths resolve against the config file's directory.
    pub fn load(path: Option<&Path>) -> Outcome<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::user(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::user(format!("invalid config {}: {e}", path.display())))?;
        if let Some(ScenarioRef::Path(p)) = &mut cfg.scenario {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(kind) = o.adapter {
            self.adapter.kind = kind;
        }
        if let Some(i) = o.iters {
            self.solver.iters = i;
        }
        if let Some(p) = o.projection {
            self.solver.projection = p;
        }
    }

    pub fn validate(&self) -> Outcome<()> {
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Failure::user(format!(
                "noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        if self.batches_per_segment == 0 {
            return Err(Failure::user("batches_per_segment must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Failure::user(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.held_out_size == 0 {
            return Err(Failure::user("held_out_size must be at least 1"));
        }
        self.engine(UpdateTarget::MostCorrelated)
            .validate()
            .map_err(Failure::user)?;
        if let Some(ScenarioRef::Path(p)) = &self.scenario {
            if !p.is_file() {
                return Err(Failure::user(format!("scenario file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn engine(&self, target: UpdateTarget) -> EngineConfig {
        EngineConfig {
            adapter: self.adapter,
            solver: self.solver,
            target,
            verify_updates: self.verify_updates,
        }
    }

    pub fn models_dir(&self) -> PathBuf {
        self.models_dir.clone().unwrap_or_else(|| self.out.join("models"))
    }

    /// The scenario this config describes. A generated one draws its domains
    /// and stream from the run seed.
    pub fn scenario(&self) -> Outcome<Scenario> {
        match &self.scenario {
            Some(ScenarioRef::Inline(s)) => {
                s.validate().map_err(Failure::user)?;
                Ok((**s).clone())
            }
            Some(ScenarioRef::Path(p)) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::user(format!("cannot read scenario file {}: {e}", p.display())))?;
                Scenario::from_json(&text)
                    .map_err(|e| Failure::user(format!("invalid scenario file {}: {e}", p.display())))
            }
            None => {
                let domains = domains_with_noise(self.seed, self.noise_scale).map_err(Failure::user)?;
                let script = default_drifting_script(domains.len(), self.batches_per_segment).map_err(Failure::user)?;
                let stream_seed = derive_seed(self.seed, Purpose::StreamBatch, u64::MAX);
                Scenario::new(domains, script, self.batch_size, stream_seed).map_err(Failure::user)
            }
        }
    }

    /// Same config, outputs under `out/seed_<s>`, for seed sweeps.
    pub fn for_seed(&self, s: u64) -> Self {
        let mut c = self.clone();
        c.seed = s;
        c.out = self.out.join(format!("seed_{s}"));
        if let Some(m) = &self.models_dir {
            c.models_dir = Some(m.join(format!("seed_{s}")));
        }
        c
    }
}

/// Seeds of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRange(pub Vec<u64>);

/// Parses `a..b` (exclusive) or `a..=b`.
pub fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected a..b or a..=b, got {s:?}"));
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start {a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end {b:?}: {e}"))?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(SeedRange(seeds))
}
