//! Command-line front end: run an experiment grid, rebuild reports from a
//! results directory, or fetch a dataset into the local cache.

use anyhow::Context;
use clap::{Parser, Subcommand};
use covevo::data::{cache_dir, fetch, CACHE_ENV};
use covevo::experiment::{run_experiment, summarize, ExperimentConfig, SummaryRow};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "covevo",
    version,
    about = "Evolves MLP architectures with coverage-guided semi-supervised fitness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid described by a TOML config file
    Run {
        config: PathBuf,
        /// Override the config's global seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild summary.csv and plots from an existing results directory
    Summarize { results_dir: PathBuf },
    /// Download a PMLB dataset into the local cache
    Fetch {
        dataset: String,
        /// Cache directory (default: $COVEVO_CACHE, then ./pmlb_cache)
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn print_summary(rows: &[SummaryRow]) {
    println!(
        "{:<12} {:>5} {:<10} {:>4} {:>8} {:>8}",
        "dataset", "q", "strategy", "reps", "mean", "max"
    );
    for r in rows {
        println!(
            "{:<12} {:>5} {:<10} {:>4} {:>8.4} {:>8.4}",
            r.dataset, r.q, r.strategy, r.repetitions, r.mean_best_test_b_acc, r.max_best_test_b_acc
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run { config, seed } => {
            let mut cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seed {
                cfg.experiment.global_seed = s;
            }
            let outcome = run_experiment(&cfg)?;
            print_summary(&outcome.summary);
            println!("results in {}", outcome.output_dir.display());
            if outcome.failed_cells.is_empty() {
                Ok(0)
            } else {
                eprintln!("{} cell(s) failed:", outcome.failed_cells.len());
                for c in &outcome.failed_cells {
                    eprintln!("  {c}");
                }
                Ok(1)
            }
        }
        Command::Summarize { results_dir } => {
            let summary = summarize(&results_dir)?;
            print_summary(&summary.rows);
            println!("wrote {}", summary.summary_path.display());
            for p in &summary.plot_paths {
                println!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Fetch { dataset, cache } => {
            let dir = cache_dir(cache.as_deref());
            log::info!("cache directory: {} (override via --cache or ${CACHE_ENV})", dir.display());
            let path = fetch(&dataset, Some(&dir))?;
            println!("{}", path.display());
            Ok(0)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}
