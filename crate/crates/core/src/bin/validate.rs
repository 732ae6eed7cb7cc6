use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mdpval::config::{Overrides, RunConfig};
use mdpval::pipeline::{self, Stage, CONFIG_FILE};
use mdpval::Result;

/// Decide whether an MDP is a sensible reinforcement learning target.
#[derive(Parser)]
#[command(name = "validate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-policy train and eval datasets.
    Generate(Common),
    /// Train the original and shuffled-action baseline ensembles.
    Train(Common),
    /// Compute feature statistics, significance and the verdict.
    Analyze(Common),
    /// Generate, train and analyze, skipping up-to-date stages.
    RunAll(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration. Defaults to <out>/config.json when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in environment 1-7.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=7))]
    env: Option<u8>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quick profile: N=5, 300 train batches of 250, 50 eval batches.
    #[arg(long)]
    reduced: bool,
    /// Worker threads for training and analysis.
    #[arg(long)]
    jobs: Option<usize>,
    /// Global percentile level X.
    #[arg(long)]
    percentile: Option<f64>,
    /// Master seed; every unset seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let from_out = self.out.as_ref().map(|o| o.join(CONFIG_FILE)).filter(|p| p.is_file());
        let mut cfg = match self.config.as_ref().or(from_out.as_ref()) {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            env: self.env,
            out: self.out.clone(),
            reduced: self.reduced,
            percentile: self.percentile,
            seed: self.seed,
        });
        cfg.resolve()
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Generate(c) | Command::Train(c) | Command::Analyze(c) | Command::RunAll(c) => c,
    };
    let cfg = common.config()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool
        .build()
        .map_err(|e| mdpval::Error::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(_) => pipeline::cmd_generate(&cfg),
        Command::Train(_) => pipeline::cmd_train(&cfg),
        Command::Analyze(_) => {
            let report = pipeline::cmd_analyze(&cfg)?;
            println!("VERDICT: {}", report.verdict.outcome);
            Ok(())
        }
        Command::RunAll(_) => {
            let r = pipeline::cmd_run_all(&cfg)?;
            for s in [Stage::Generate, Stage::Train, Stage::Analyze] {
                if !r.ran.contains(&s) {
                    eprintln!("{s:?}: inputs unchanged, skipped");
                }
            }
            println!("VERDICT: {}", r.report.verdict.outcome);
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
