use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dpsurvey::experiment::{run_command, Command, ExperimentConfig};

/// Simulates and audits differentially private peer-prediction surveys.
#[derive(Parser)]
#[command(name = "dpsurvey", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the mechanism on sampled populations, one CSV row per trial.
    Run(Common),
    /// Closed-form and noisy posterior predictions p0, p1.
    Posterior(Common),
    /// Cost threshold tau for the configured alpha and delta.
    Threshold(Common),
    /// Histogram audit of the privacy claim on neighbouring inputs.
    AuditDp(Common),
    /// Best-response audit of truthful threshold play.
    AuditEquilibrium(Common),
    /// Accuracy of the published estimate under a strategy profile.
    Accuracy(Common),
    /// Total payment against population size under the quadratic model.
    CostScaling(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// CSV output path. Overrides `csv_out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Cmd {
    fn split(&self) -> (Command, &Common) {
        match self {
            Cmd::Run(c) => (Command::Run, c),
            Cmd::Posterior(c) => (Command::Posterior, c),
            Cmd::Threshold(c) => (Command::Threshold, c),
            Cmd::AuditDp(c) => (Command::AuditDp, c),
            Cmd::AuditEquilibrium(c) => (Command::AuditEquilibrium, c),
            Cmd::Accuracy(c) => (Command::Accuracy, c),
            Cmd::CostScaling(c) => (Command::CostScaling, c),
        }
    }
}

fn execute(command: Command, args: &Common) -> Result<i32> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring worker threads")?;
    }
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config = ExperimentConfig::from_json_str(&text)?;
    let output = run_command(command, &config, args.seed)?;
    let csv_path = args
        .out
        .clone()
        .or_else(|| config.csv_out.as_ref().map(PathBuf::from));
    if let Some(path) = csv_path {
        std::fs::write(&path, &output.csv)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", output.json);
    Ok(output.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, args) = cli.command.split();
    match execute(command, args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
