use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use figar::experiment::{self, ExperimentConfig};
use figar::reporting::{self, DEFAULT_SWEEP};
use figar::Error;

/// Train, evaluate and report on factored action-repetition learners.
#[derive(Parser)]
#[command(name = "figar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration, writing a run directory.
    Run {
        config: PathBuf,
        /// Overrides `master_seed` from the config.
        #[arg(long, env = "FIGAR_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "FIGAR_OUTPUT_ROOT", default_value = "runs")]
        output_root: PathBuf,
    },
    /// Compare a figar run with a baseline run on the same task.
    Compare {
        figar_run: PathBuf,
        baseline_run: PathBuf,
        /// Defaults to `comparison.csv` inside the figar run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the baseline and each repetition-set variant with shared hyperparameters.
    Sweep {
        config: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        variants: Vec<String>,
        #[arg(long, env = "FIGAR_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "FIGAR_OUTPUT_ROOT", default_value = "runs")]
        output_root: PathBuf,
    },
    /// Solve the tabular environment of a config exactly and dump the optimal policy.
    Oracle {
        config: PathBuf,
        /// Defaults to `oracle.csv` in the current directory.
        #[arg(long, default_value = "oracle.csv")]
        out: PathBuf,
        #[arg(long, env = "FIGAR_SEED")]
        seed: Option<u64>,
    },
    /// Sampling sweep, repetition-head ablation and stochastic histogram for a finished run.
    Report {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Sampling probabilities for the sweep.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
        ps: Vec<f64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    config.resolved()
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            config,
            seed,
            output_root,
        } => {
            let config = load(&config, seed)?;
            let dir = experiment::run_to_dir(&config, &output_root)?;
            let m = experiment::RunManifest::load(&dir)?;
            println!("{}", dir.display());
            println!(
                "mean return {:.4} (95% CI {:.4} .. {:.4}), mean repetition {:.3}, success {:.2}",
                m.metrics.mean_return, m.metrics.ci_lower, m.metrics.ci_upper, m.metrics.mean_repetition, m.metrics.success_rate
            );
        }
        Command::Compare {
            figar_run,
            baseline_run,
            out,
        } => {
            let row = experiment::compare(&figar_run, &baseline_run)?;
            let out = out.unwrap_or_else(|| figar_run.join("comparison.csv"));
            reporting::write_comparison_csv(std::slice::from_ref(&row), fs::File::create(&out)?)?;
            println!("{}: figar {:.4} baseline {:.4} improvement {:.4}", row.task, row.figar, row.baseline, row.improvement);
            println!("{}", out.display());
        }
        Command::Sweep {
            config,
            variants,
            seed,
            output_root,
        } => {
            let config = load(&config, seed)?;
            let (dir, rows) = experiment::sweep_variants(&config, &variants, &output_root)?;
            for r in &rows {
                println!("{:<16} {:>10.4} rep {:>6.3}  i {:>8.4}", r.variant, r.mean_return, r.mean_repetition, r.improvement);
            }
            println!("{}", dir.join(experiment::SUMMARY_FILE).display());
        }
        Command::Oracle { config, out, seed } => {
            let config = load(&config, seed)?;
            let set = config.repetition()?;
            let (model, solution) = experiment::solve_oracle(&config.env, &set)?;
            solution.write_csv(&set, fs::File::create(&out)?)?;
            println!("{}", serde_json::to_string_pretty(&solution.summary(&model))?);
        }
        Command::Report { run_dir, episodes, ps } => {
            for p in experiment::report(&run_dir, episodes, &ps)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
