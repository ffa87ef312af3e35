//! Command-line driver: train policies, optimize leads, compute metrics,
//! and export plot data. Exit codes: 0 on success, 1 for configuration
//! errors, 2 for runtime failures.

mod selftest;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use molopt::config::ExperimentConfig;
use molopt::experiment::{self, generate_leads, load_results, run_experiment, train};
use molopt::metrics::success_curve;
use molopt::policy::save_checkpoint;
use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "molopt",
    version,
    about = "Budget-constrained molecular lead optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the edit policy and write a checkpoint plus diagnostics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoint.json and train_diagnostics.ndjson.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Optimize a leads file under the task budget and write results.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Policy checkpoint; omitted means the untrained reference policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Leads file, one SMILES per line.
        #[arg(long)]
        leads: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the oracle budget.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Write per-lead evolution run logs under OUT/run_logs/.
        #[arg(long)]
        run_logs: bool,
    },
    /// Train and evaluate in one run, entirely from the config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute metrics from a results file.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Write metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a success-rate-versus-oracle-calls curve as CSV.
    PlotData {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Curve extent; defaults to the maximum calls observed.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Write an example configuration file.
    InitConfig {
        #[arg(long, default_value = "molopt.json")]
        out: PathBuf,
    },
}

/// Errors before any computation starts (bad flags, unreadable or invalid
/// config) exit with 1; failures during a run exit with 2.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .chain()
                .any(|cause| cause.downcast_ref::<molopt::config::ConfigError>().is_some());
            ExitCode::from(if config_error { 1 } else { 2 })
        }
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            workers,
        } => {
            let cfg = load_config(&config, seed)?;
            std::fs::create_dir_all(&out)?;
            molopt::par::with_workers(workers, || -> Result<()> {
                let library = experiment::load_library(&cfg)?;
                let leads = generate_leads(
                    &cfg,
                    &library,
                    "train-leads",
                    cfg.training.num_leads,
                    &HashSet::new(),
                )?;
                let artifacts = train(&cfg, &library, &leads)?;
                let ckpt = out.join("checkpoint.json");
                save_checkpoint(&artifacts.params, &ckpt)?;
                std::fs::write(
                    out.join("train_diagnostics.ndjson"),
                    experiment::diagnostics_jsonl(&artifacts.diagnostics),
                )?;
                println!("checkpoint written to {}", ckpt.display());
                Ok(())
            })
        }
        Command::Optimize {
            config,
            checkpoint,
            leads,
            out,
            seed,
            budget,
            workers,
            run_logs,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(budget) = budget {
                cfg.inference.evolve.budget = budget;
            }
            let summary = experiment::optimize_leads(
                &cfg,
                checkpoint.as_deref(),
                &leads,
                &out,
                workers,
                run_logs,
            )?;
            println!(
                "{} leads: success rate {:.2}%, similarity {:.3}, relative improvement {:.3}",
                summary.metrics.count,
                summary.metrics.success_rate,
                summary.metrics.avg_similarity,
                summary.metrics.relative_improvement,
            );
            println!("results written to {}", summary.results_path.display());
            Ok(())
        }
        Command::Experiment {
            config,
            out,
            seed,
            workers,
        } => {
            let cfg = load_config(&config, seed)?;
            let summary = run_experiment(&cfg, &out, workers)?;
            println!(
                "{} leads: success rate {:.2}%, similarity {:.3}, relative improvement {:.3}",
                summary.metrics.count,
                summary.metrics.success_rate,
                summary.metrics.avg_similarity,
                summary.metrics.relative_improvement,
            );
            Ok(())
        }
        Command::Eval {
            config,
            results,
            out,
        } => {
            let cfg = load_config(&config, None)?;
            let records = load_results(&results)?;
            let metrics = molopt::metrics::summarize(&records, &cfg.task.properties)?;
            let rendered = serde_json::to_string_pretty(&metrics)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, rendered + "\n")?;
                    println!("metrics written to {}", path.display());
                }
                None => println!("{rendered}"),
            }
            Ok(())
        }
        Command::PlotData {
            results,
            out,
            budget,
        } => {
            let records = load_results(&results)?;
            let max_calls = budget.unwrap_or_else(|| {
                records
                    .iter()
                    .map(|r| r.oracle_calls_used)
                    .max()
                    .unwrap_or(0)
            });
            let curve = success_curve(&records, max_calls);
            let mut csv = String::from("oracle_calls,success_rate\n");
            for (calls, sr) in curve {
                csv.push_str(&format!("{calls},{sr}\n"));
            }
            std::fs::write(&out, csv)?;
            println!("curve written to {}", out.display());
            Ok(())
        }
        Command::Selftest => selftest::run(),
        Command::InitConfig { out } => {
            let cfg = ExperimentConfig::example();
            std::fs::write(&out, serde_json::to_string_pretty(&cfg)? + "\n")?;
            println!("example config written to {}", out.display());
            Ok(())
        }
    }
}
