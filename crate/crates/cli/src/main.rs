//! `psce`: train Bayesian classifiers, generate counterfactuals, evaluate them
//! and check their robustness bounds under model updates.

mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Bad arguments or inputs; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "psce", version, about = "Probabilistically safe counterfactual explanations")]
struct Cli {
    /// Directory for outputs given as relative paths.
    #[arg(long, global = true, env = "PSCE_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,
    /// Worker threads for per-instance work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a classifier (bnn, dropout) or a generative model (vae, ae).
    Train(commands::train::TrainArgs),
    /// Generate counterfactuals for test instances.
    Generate(commands::generate::GenerateArgs),
    /// Score methods on IM1, implausibility, robustness ratio and validity.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Fine-tune on growing data and check the bounds on one counterfactual.
    ModelChange(commands::model_change::ModelChangeArgs),
    /// Largest posterior KL that keeps a bound above a threshold.
    KlBudget(commands::kl_budget::KlBudgetArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<psce::Error>() {
        Some(
            psce::Error::InvalidConfig(_)
            | psce::Error::InvalidClass { .. }
            | psce::Error::Dimension { .. }
            | psce::Error::UnsupportedModel(_)
            | psce::Error::Checkpoint(_)
            | psce::Error::Csv { .. }
            | psce::Error::EmptyDataset,
        ) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cli.output_dir)
        .map_err(|e| anyhow::anyhow!("creating {}: {e}", cli.output_dir.display()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(UsageError("--jobs must be positive".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let dir = cli.output_dir;
    pool.install(|| match cli.command {
        Command::Train(a) => commands::train::run(&dir, a),
        Command::Generate(a) => commands::generate::run(&dir, a),
        Command::Evaluate(a) => commands::evaluate::run(&dir, a),
        Command::ModelChange(a) => commands::model_change::run(&dir, a),
        Command::KlBudget(a) => commands::kl_budget::run(a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
