use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fsrlab_cli::{
    cmd_budget, cmd_report, cmd_run, cmd_select_demo, format_budget, BudgetArgs, CliError, RunArgs, SelectArgs, OUT_ENV,
};
use fsrlab_core::memory::{GradientProbe, SelectionStrategy, StorageMode};

#[derive(Parser)]
#[command(name = "fsrlab", version, about = "Continual-learning experiments with functional regularisation on episodic memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every arm and seed of an experiment config.
    Run {
        config: PathBuf,
        /// Replace a config value, e.g. `method.lambda=5`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, env = OUT_ENV, default_value = "runs")]
        out: PathBuf,
        /// Number of runs trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Save model and method state at the end of every run.
        #[arg(long)]
        checkpoint: bool,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Examples per task that fit in the storage EWC uses for a model.
    Budget {
        /// Layer shapes, e.g. `784x1024,1024x10` or `5x5x3x128,...`.
        model: String,
        /// Input dimension.
        #[arg(long)]
        d: u64,
        /// Logits stored per example.
        #[arg(long)]
        k: u64,
        #[arg(long)]
        tasks: u64,
        #[arg(long, value_enum, default_value = "float32")]
        storage: Storage,
        #[arg(long)]
        json: bool,
    },
    /// Select memory examples from a dataset with one strategy.
    SelectDemo {
        /// CSV file (label first), or IDX images together with --labels.
        dataset: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: Strategy,
        /// Examples per class.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "selection")]
        out: PathBuf,
        /// Hidden widths of the gradient probe network.
        #[arg(long, value_delimiter = ',', default_value = "256,256")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        probe_epochs: usize,
    },
    /// Aggregate a run directory into tables and plots.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Storage {
    Float32,
    Uint8,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Strategy {
    Random,
    Herding,
    Gradient,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            overrides,
            out,
            jobs,
            checkpoint,
            seeds,
        } => {
            let outcomes = cmd_run(&RunArgs {
                config,
                overrides,
                out,
                jobs,
                checkpoint,
                seeds,
            })?;
            let mut failed = Vec::new();
            for o in &outcomes {
                match &o.result {
                    Ok(acc) => println!("{:<40} seed {:<4} final avg acc {:.4}  {}", o.arm, o.seed, acc, o.dir.display()),
                    Err(e) => {
                        println!("{:<40} seed {:<4} FAILED: {e}", o.arm, o.seed);
                        failed.push(format!("{} seed {}", o.arm, o.seed));
                    }
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!(
                    "{} of {} runs failed: {}",
                    failed.len(),
                    outcomes.len(),
                    failed.join(", ")
                )))
            }
        }
        Command::Budget {
            model,
            d,
            k,
            tasks,
            storage,
            json,
        } => {
            let storage = match storage {
                Storage::Float32 => StorageMode::Float32,
                Storage::Uint8 => StorageMode::Uint8,
            };
            let r = cmd_budget(&BudgetArgs {
                model,
                d,
                k,
                n_tasks: tasks,
                storage,
            })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r).expect("budget serializes"));
            } else {
                print!("{}", format_budget(&r));
            }
            Ok(())
        }
        Command::SelectDemo {
            dataset,
            labels,
            strategy,
            m,
            seed,
            out,
            hidden,
            probe_epochs,
        } => {
            let strategy = match strategy {
                Strategy::Random => SelectionStrategy::Random,
                Strategy::Herding => SelectionStrategy::Herding,
                Strategy::Gradient => SelectionStrategy::Gradient,
            };
            let probe = GradientProbe {
                epochs: probe_epochs,
                ..Default::default()
            };
            let s = cmd_select_demo(&SelectArgs {
                dataset,
                labels,
                strategy,
                m,
                seed,
                out: out.clone(),
                hidden,
                probe,
            })?;
            println!("class population selected mean_gap");
            for (c, n, k, gap) in &s.per_class {
                println!("{c:>5} {n:>10} {k:>8} {gap:.4}");
            }
            println!("{} indices written to {}", s.indices.len(), out.display());
            Ok(())
        }
        Command::Report { run_dir } => {
            let r = cmd_report(&run_dir)?;
            for a in &r.arms {
                let (m, se) = a.avg_accuracy.last().copied().unwrap_or((f64::NAN, f64::NAN));
                println!("{:<40} {} seeds  final avg acc {:.4} ± {:.4}", a.arm, a.seeds.len(), m, se);
            }
            println!("report written to {}", run_dir.join("report").display());
            Ok(())
        }
    }
}
