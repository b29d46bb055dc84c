use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use uwb_tdoa::patching::PatchStrategy;
use uwb_tdoa_cli::commands::{self, GridSelection, SweepOptions};
use uwb_tdoa_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "uwb-tdoa",
    version,
    about = "UWB TDoA localization with transformer-based error correction"
)]
struct Cli {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set model.d_model=32`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    MultiCir,
    PerCir,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training and evaluation sets into a directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Classical TDoA baseline metrics on a dataset.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        /// Environment JSON written by `simulate`; otherwise from the config.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Metrics JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-sample estimates CSV.
        #[arg(long)]
        estimates: Option<PathBuf>,
    },
    /// Train the correction model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Baseline and corrected metrics of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Architecture sweep; resumes from an existing results file.
    Sweep {
        /// Directory with `train.jsonl`, `eval.jsonl` and `environment.json`;
        /// simulated from the config when omitted.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "sweep_results.csv")]
        results: PathBuf,
        #[arg(long, default_value = "pareto.csv")]
        pareto: PathBuf,
        #[arg(long, value_enum)]
        only: Option<Strategy>,
        /// Stop after this many new configurations.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Operation counts for the whole grid plus the CNN reference.
    Complexity {
        #[arg(long, default_value_t = 15)]
        n_total: usize,
        /// Mean available anchors; taken from `--data` when given.
        #[arg(long, default_value_t = 6.0)]
        n_av: f64,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pareto front of a sweep results file.
    Pareto {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = ExperimentConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Simulate { out } => {
            let data = commands::cmd_simulate(&cfg, &out)?;
            if !cli.quiet {
                eprintln!(
                    "{} training / {} evaluation samples written to {}; {:.2} of {} anchors available on average",
                    data.train.len(),
                    data.eval.len(),
                    out.display(),
                    commands::mean_available(&data.eval),
                    data.env.anchors.len()
                );
            }
        }
        Command::Baseline {
            data,
            env,
            out,
            estimates,
        } => {
            let env = commands::environment(&cfg, env.as_deref())?;
            print_json(&commands::cmd_baseline(
                &cfg,
                &env,
                &data,
                out.as_deref(),
                estimates.as_deref(),
            )?)?;
        }
        Command::Train {
            data,
            env,
            out,
            history,
        } => {
            let env = commands::environment(&cfg, env.as_deref())?;
            let trained = commands::cmd_train(&cfg, &env, &data, &out, history.as_deref(), cli.quiet)?;
            if !cli.quiet {
                eprintln!("best epoch {}, checkpoint {}", trained.best_epoch, out.display());
            }
        }
        Command::Evaluate {
            checkpoint,
            data,
            env,
            out,
        } => {
            let env = commands::environment(&cfg, env.as_deref())?;
            print_json(&commands::cmd_evaluate(&cfg, &env, &checkpoint, &data, out.as_deref())?)?;
        }
        Command::Sweep {
            data_dir,
            results,
            pareto,
            only,
            limit,
        } => {
            let selection = match only {
                None => GridSelection::All,
                Some(Strategy::MultiCir) => GridSelection::Only(PatchStrategy::MultiCir),
                Some(Strategy::PerCir) => GridSelection::Only(PatchStrategy::PerCir),
            };
            let o = commands::cmd_sweep(
                &cfg,
                &SweepOptions {
                    data_dir: data_dir.as_deref(),
                    results: &results,
                    pareto: &pareto,
                    selection,
                    limit,
                    quiet: cli.quiet,
                },
            )?;
            eprintln!(
                "{} trained ({} failed), {} already done, {} on the Pareto front",
                o.attempted,
                o.failed,
                o.skipped,
                o.pareto.len()
            );
        }
        Command::Complexity {
            n_total,
            n_av,
            data,
            out,
        } => {
            let n_av = match data {
                Some(p) => commands::mean_available(&uwb_tdoa::dataset::load_dataset(&p)?),
                None => n_av,
            };
            commands::cmd_complexity(&cfg, n_total, n_av, out.as_deref())?;
        }
        Command::Pareto { results, out } => {
            let front = commands::cmd_pareto(&results, &out)?;
            if !cli.quiet {
                eprintln!("{} configurations on the front", front.len());
            }
        }
    }
    Ok(())
}
