use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dualagent_cli::{
    cmd_ablate, cmd_report, cmd_run, cmd_synth, CoordinatorChoice, RunOptions, RunSpec,
};
use dualagent_core::dataio::SyntheticConfig;
use dualagent_core::Mode;

#[derive(Parser)]
#[command(name = "dualagent", version, about = "Constrained multi-objective list optimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// JSON synthetic-dataset config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the method comparison matrix.
    Run(RunArgs),
    /// Run the one-at-a-time ablation grid.
    Ablate(RunArgs),
    /// Re-aggregate existing metrics files.
    Report {
        /// Metrics CSV files; defaults to `<out-dir>/metrics.csv`.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run spec; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated trial seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated modes: dual, no-llm, single-population, no-constraints.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<Mode>>,
    /// Use the live chat-completion endpoint for coordination.
    #[arg(long, conflicts_with = "mock_llm")]
    llm: bool,
    /// JSON array of canned coordinator replies (strings, or null for a transport failure).
    #[arg(long)]
    mock_llm: Option<PathBuf>,
    /// Also write gnuplot-ready trace files.
    #[arg(long)]
    gnuplot: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunSpec, RunOptions)> {
        let mut spec = match &self.config {
            Some(path) => RunSpec::from_file(path)?,
            None => RunSpec::default(),
        };
        if let Some(seeds) = &self.seeds {
            spec.seeds = seeds.clone();
            spec.trials = None;
        }
        if let Some(modes) = &self.modes {
            spec.modes = modes.clone();
        }
        let coordinator = if let Some(path) = &self.mock_llm {
            let script = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            CoordinatorChoice::Scripted(script)
        } else if self.llm {
            CoordinatorChoice::Live(spec.llm.clone().with_env_overrides())
        } else {
            CoordinatorChoice::Rule
        };
        Ok((
            spec,
            RunOptions {
                coordinator,
                gnuplot: self.gnuplot,
            },
        ))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { config, out_dir, seed } => {
            let mut config: SyntheticConfig = match config {
                Some(path) => serde_json::from_str(
                    &std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )?,
                None => SyntheticConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let (_, summary) = cmd_synth(&config, &out_dir)?;
            println!("items,categories,sellers,users,interactions,recent_items,now");
            println!(
                "{},{},{},{},{},{},{}",
                summary.items,
                summary.categories,
                summary.sellers,
                summary.users,
                summary.interactions,
                summary.recent_items,
                summary.now
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let (spec, options) = args.resolve()?;
            let summary = cmd_run(&spec, &args.out_dir, &options)?;
            println!("mode,hv,ndcg,diversity,feasibility,success");
            for r in &summary.mean_rows {
                println!(
                    "{},{:.4},{:.4},{:.4},{:.4},{:.2}",
                    r.mode, r.hv, r.ndcg, r.diversity, r.front_feasibility, r.success
                );
            }
            Ok(if summary.all_feasible {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Ablate(args) => {
            let (spec, options) = args.resolve()?;
            let rows = cmd_ablate(&spec, &args.out_dir, &options)?;
            println!("parameter,setting,hv,ndcg,diversity,time_s");
            for r in &rows {
                println!(
                    "{},{},{:.4},{:.4},{:.4},{:.3}",
                    r.parameter, r.setting, r.hv, r.ndcg, r.diversity, r.time_s
                );
            }
            Ok(if rows.iter().all(|r| r.feasibility == 1.0) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Report { inputs, out_dir } => {
            let inputs = if inputs.is_empty() {
                vec![out_dir.join("metrics.csv")]
            } else {
                inputs
            };
            let rows = cmd_report(&inputs, &out_dir)?;
            println!("mode,hv,ndcg,diversity,feasibility,success");
            for r in &rows {
                println!(
                    "{},{:.4},{:.4},{:.4},{:.4},{:.2}",
                    r.mode, r.hv, r.ndcg, r.diversity, r.front_feasibility, r.success
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
