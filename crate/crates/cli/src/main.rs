//! `meta`: train source models, run multi-source test-time adaptation on a
//! synthetic stream, compare against baselines and plot the results.
//!
//! Exit codes: 0 on success, 2 for bad input (flags, config, missing files,
//! malformed CSV), 3 when the data cannot be used (mismatched models,
//! divergence). Progress goes to stdout, diagnostics to stderr. Set
//! `META_LOG=info` or `META_LOG=debug` for logs.

mod commands;
mod config;
mod exit;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use meta_tta::adapters::AdapterKind;
use meta_tta::engine::UpdateTarget;
use meta_tta::ensemble::Projection;

use config::{parse_seed_range, Overrides, RunConfig, SeedRange};
use exit::{Failure, Outcome};

#[derive(Parser)]
#[command(name = "meta", version, about = "Multi-source test-time adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one source model per scenario domain.
    TrainSources(Common),
    /// Run the weighted ensemble over the stream and measure forgetting.
    Run(Common),
    /// Independently adapted single sources and the uniform ensemble.
    Baselines(Common),
    /// Run with a different update set: most, least or all.
    Ablation {
        #[arg(value_parser = clap::value_parser!(UpdateTarget))]
        mode: UpdateTarget,
        #[command(flatten)]
        common: Common,
    },
    /// Render CSV outputs as SVG line charts.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Directory for the SVG files (default: next to each CSV).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Sweep seeds `a..b` or `a..=b` in parallel; outputs go to `<out>/seed_<s>`.
    #[arg(long, value_parser = parse_seed_range)]
    seeds: Option<SeedRange>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// tent, bn_stats or none.
    #[arg(long, value_parser = clap::value_parser!(AdapterKind))]
    adapter: Option<AdapterKind>,
    /// Weight-solver iterations per batch.
    #[arg(long)]
    iters: Option<usize>,
    /// softmax or euclidean.
    #[arg(long, value_parser = clap::value_parser!(Projection))]
    projection: Option<Projection>,
}

impl Common {
    fn configs(&self) -> Outcome<Vec<RunConfig>> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            out: self.out.clone(),
            adapter: self.adapter,
            iters: self.iters,
            projection: self.projection,
        });
        cfg.validate()?;
        Ok(match &self.seeds {
            Some(SeedRange(seeds)) => seeds.iter().map(|&s| cfg.for_seed(s)).collect(),
            None => vec![cfg],
        })
    }
}

/// Runs `f` once per config, in parallel for seed sweeps. Every failure is
/// reported; the worst exit code wins.
fn each(common: &Common, f: impl Fn(&RunConfig) -> Outcome<()> + Sync) -> Outcome<()> {
    let cfgs = common.configs()?;
    if cfgs.len() == 1 {
        return f(&cfgs[0]);
    }
    let failures: Vec<(u64, Failure)> = cfgs
        .par_iter()
        .filter_map(|c| f(c).err().map(|e| (c.seed, e)))
        .collect();
    let code = failures.iter().map(|(_, e)| e.code).max();
    for (s, e) in &failures {
        eprintln!("error: seed {s}: {e}");
    }
    match code {
        None => Ok(()),
        Some(code) => Err(Failure {
            code,
            err: anyhow::anyhow!("{} of {} seeds failed", failures.len(), cfgs.len()),
        }),
    }
}

fn dispatch(cmd: Cmd) -> Outcome<()> {
    match cmd {
        Cmd::TrainSources(c) => each(&c, commands::train_sources),
        Cmd::Run(c) => each(&c, commands::run),
        Cmd::Baselines(c) => each(&c, commands::baselines),
        Cmd::Ablation { mode, common } => each(&common, |c| commands::ablation(c, mode)),
        Cmd::Report { csv, out } => {
            for p in report::report(&csv, out.as_deref())? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("META_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
