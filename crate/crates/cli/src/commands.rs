//! The experiment subcommands. Each reads a [`RunConfig`] and writes its
//! artifacts under the configured output directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use meta_tta::engine::{run_experiment, run_single_source_baseline, run_uniform_ensemble, HeldOut, UpdateTarget};
use meta_tta::ensemble::check_compatible;
use meta_tta::records::{num, write_batch_csv, write_forgetting_csv};
use meta_tta::scenario::{source_train_seed, train_source, Scenario, TrainConfig};
use meta_tta::seed::{derive_seed, Purpose};
use meta_tta::MlpModel;

use crate::config::RunConfig;
use crate::exit::{Failure, Outcome};

fn model_path(dir: &Path, j: usize) -> PathBuf {
    dir.join(format!("source_{j}.json"))
}

fn create(path: &Path) -> Outcome<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    let f = fs::File::create(path).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_models(dir: &Path, models: &[MlpModel]) -> Outcome<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
    for (j, m) in models.iter().enumerate() {
        let path = model_path(dir, j);
        fs::write(&path, m.to_json()?)
            .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Outcome<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(path)?);
    let io = |e: csv::Error| Failure::runtime(format!("cannot write {}: {e}", path.display()));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Loads `source_0.json`, `source_1.json`, … until the first gap.
pub fn load_models(dir: &Path) -> Outcome<Vec<MlpModel>> {
    if !dir.is_dir() {
        return Err(Failure::user(format!(
            "model directory not found: {} (run train-sources first)",
            dir.display()
        )));
    }
    let mut models = Vec::new();
    loop {
        let path = model_path(dir, models.len());
        if !path.is_file() {
            break;
        }
        let text =
            fs::read_to_string(&path).map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))?;
        let m = MlpModel::from_json(&text)
            .map_err(|e| Failure::runtime(format!("bad model file {}: {e}", path.display())))?;
        models.push(m);
    }
    if models.is_empty() {
        return Err(Failure::user(format!(
            "no trained models in {}: expected {}",
            dir.display(),
            model_path(dir, 0).display()
        )));
    }
    Ok(models)
}

/// Models must share one architecture that fits the scenario's domains.
pub fn check_models(models: &[MlpModel], scenario: &Scenario) -> Outcome<()> {
    check_compatible(models).map_err(Failure::runtime)?;
    let d = &scenario.domains[0];
    let m = &models[0];
    if m.input_dim() != d.input_dim() || m.num_classes() != d.num_classes() {
        return Err(Failure::runtime(format!(
            "models map {} inputs to {} classes but the scenario has {} inputs and {} classes",
            m.input_dim(),
            m.num_classes(),
            d.input_dim(),
            d.num_classes()
        )));
    }
    Ok(())
}

/// Trains one source per scenario domain. Writes the models, the scenario
/// and `train_summary.csv`.
pub fn train_sources(cfg: &RunConfig) -> Outcome<()> {
    let scenario = cfg.scenario()?;
    let dir = cfg.models_dir();
    let mut models = Vec::new();
    for (j, domain) in scenario.domains.iter().enumerate() {
        let tc = TrainConfig {
            seed: source_train_seed(cfg.seed, j),
            ..cfg.train.clone()
        };
        let m = train_source(domain, &tc).map_err(|e| Failure::from(e).context(format!("training source {j}")))?;
        println!(
            "source {j} (domain {}): own-domain error {:.4}",
            domain.domain_id,
            m.meta.train_err.unwrap_or(f64::NAN)
        );
        models.push(m);
    }
    write_models(&dir, &models)?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("scenario.json"), scenario.to_json()?)?;
    let header = ["source_id", "domain_id", "seed", "own_domain_err"].map(String::from);
    let rows = models.iter().enumerate().map(|(j, m)| {
        vec![
            j.to_string(),
            m.meta.domain_id.to_string(),
            m.meta.seed.to_string(),
            m.meta.train_err.map(num).unwrap_or_default(),
        ]
    });
    let summary = cfg.out.join("train_summary.csv");
    write_csv(&summary, &header, rows)?;
    println!(
        "wrote {} models to {} and {}",
        models.len(),
        dir.display(),
        summary.display()
    );
    Ok(())
}

fn prepare(cfg: &RunConfig) -> Outcome<(Scenario, Vec<MlpModel>)> {
    let scenario = cfg.scenario()?;
    let models = load_models(&cfg.models_dir())?;
    check_models(&models, &scenario)?;
    Ok((scenario, models))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn experiment(cfg: &RunConfig, target: UpdateTarget, dir: &Path) -> Outcome<()> {
    let (scenario, models) = prepare(cfg)?;
    let held_out = HeldOut::for_models(
        &models,
        &scenario,
        cfg.held_out_size,
        derive_seed(cfg.seed, Purpose::HeldOut, 0),
    )
    .map_err(Failure::runtime)?;
    println!(
        "running {} sources over {} batches of {}",
        models.len(),
        scenario.total_batches(),
        scenario.batch_size
    );
    let exp = run_experiment(&models, &scenario, &cfg.engine(target), Some(&held_out))?;

    let batches = dir.join("batches.csv");
    write_batch_csv(create(&batches)?, &exp.records)?;
    let forgetting = dir.join("forgetting.csv");
    write_forgetting_csv(create(&forgetting)?, &exp.forgetting)?;
    write_models(&dir.join("models"), &exp.models)?;

    let r = &exp.records;
    println!(
        "mean error: meta {:.4}, best source {:.4}, worst source {:.4}, uniform {:.4}",
        mean(r.iter().map(|b| b.meta_err)),
        mean(r.iter().map(|b| b.best_err)),
        mean(r.iter().map(|b| b.worst_err)),
        mean(r.iter().map(|b| b.uniform_err)),
    );
    println!("wrote {} and {}", batches.display(), forgetting.display());
    Ok(())
}

/// MeTA over the stream with per-batch baselines and forgetting checkpoints.
pub fn run(cfg: &RunConfig) -> Outcome<()> {
    experiment(cfg, UpdateTarget::MostCorrelated, &cfg.out.join("run"))
}

pub fn target_name(t: UpdateTarget) -> &'static str {
    match t {
        UpdateTarget::MostCorrelated => "most",
        UpdateTarget::LeastCorrelated => "least",
        UpdateTarget::All => "all",
    }
}

/// Same as [`run`] but adapting the chosen update set.
pub fn ablation(cfg: &RunConfig, target: UpdateTarget) -> Outcome<()> {
    experiment(cfg, target, &cfg.out.join(format!("ablation_{}", target_name(target))))
}

/// Independently adapted sources and the frozen uniform ensemble.
pub fn baselines(cfg: &RunConfig) -> Outcome<()> {
    let (scenario, models) = prepare(cfg)?;
    let dir = cfg.out.join("baselines");
    let n = models.len();

    let single = run_single_source_baseline(&models, &scenario, &cfg.adapter)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|j| format!("src{j}_err")));
    header.extend(["best_err", "worst_err"].map(String::from));
    let rows = single.batches.iter().map(|b| {
        let mut row = vec![b.t.to_string()];
        row.extend(b.errs.iter().copied().map(num));
        row.extend([num(b.best), num(b.worst)]);
        row
    });
    let single_path = dir.join("single_source.csv");
    write_csv(&single_path, &header, rows)?;

    let uniform = run_uniform_ensemble(&models, &scenario)?;
    let uniform_path = dir.join("uniform.csv");
    write_csv(
        &uniform_path,
        &["t", "uniform_err"].map(String::from),
        uniform.iter().enumerate().map(|(t, e)| vec![t.to_string(), num(*e)]),
    )?;

    println!(
        "mean error: best source {:.4}, worst source {:.4}, uniform {:.4}",
        mean(single.batches.iter().map(|b| b.best)),
        mean(single.batches.iter().map(|b| b.worst)),
        mean(uniform.iter().copied()),
    );
    println!("wrote {} and {}", single_path.display(), uniform_path.display());
    Ok(())
}
