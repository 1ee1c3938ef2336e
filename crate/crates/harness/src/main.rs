use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use autoloss_harness::commands::{self, Output, Overrides, TransferMode};

/// Learn optimization schedules for alternate training and compare them
/// against fixed schedules.
#[derive(Parser)]
#[command(name = "autoloss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Total batch budget (controller training plus guidance).
    #[arg(long)]
    budget: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Drop one feature block: progress, grad_norms, loss_values, validation.
    #[arg(long)]
    ablate: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and save the trial-0 dataset and splits.
    Synth(Common),
    /// Train a controller and save its checkpoint.
    TrainController(Common),
    /// Train fresh task models under the learned controller.
    Guide {
        #[command(flatten)]
        common: Common,
        /// Train and guide once per λ on a log grid.
        #[arg(long, value_name = "LO:HI:N")]
        lambda_sweep: Option<String>,
    },
    /// Run a fixed-schedule baseline (or `all`).
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        baseline: String,
        #[arg(long, value_name = "LO:HI:N")]
        lambda_sweep: Option<String>,
    },
    /// Guide new datasets and/or model shapes with a controller trained once.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "data")]
        mode: String,
    },
    /// Summarize every result table in the output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn setup(c: &Common) -> Result<(autoloss_harness::config::ExperimentConfig, Output)> {
    let ov = Overrides {
        seed: c.seed,
        budget: c.budget,
        ablate: c.ablate.clone(),
    };
    let cfg = commands::resolve_config(c.config.as_deref(), &ov)?;
    eprintln!("config {} ({})", cfg.short_hash(), cfg.kind().tag());
    Ok((cfg, Output::new(&c.out, c.force)))
}

fn sweep(s: &Option<String>) -> Result<Option<Vec<f64>>> {
    s.as_deref().map(commands::parse_lambda_sweep).transpose()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let written = match &cli.command {
        Command::Synth(c) => {
            let (cfg, out) = setup(c)?;
            commands::synth(&cfg, &out)?
        }
        Command::TrainController(c) => {
            let (cfg, out) = setup(c)?;
            commands::train_controller(&cfg, &out)?
        }
        Command::Guide { common, lambda_sweep } => {
            let (cfg, out) = setup(common)?;
            commands::guide(&cfg, &out, sweep(lambda_sweep)?.as_deref())?
        }
        Command::Baseline {
            common,
            baseline,
            lambda_sweep,
        } => {
            let (cfg, out) = setup(common)?;
            commands::baseline(&cfg, &out, baseline, sweep(lambda_sweep)?.as_deref())?
        }
        Command::Transfer { common, mode } => {
            let (cfg, out) = setup(common)?;
            commands::transfer(&cfg, &out, TransferMode::parse(mode)?)?
        }
        Command::Report { out, force } => commands::report(&Output::new(out, *force))?,
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
