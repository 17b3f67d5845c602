use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use d3pi_cli::bench::{parse_agent_list, run_benchmark, selftest, sweep_agents};
use d3pi_cli::config::{ConfigError, RunConfig};
use d3pi_core::Error as CoreError;

/// Data-driven distributed policy iteration benchmark harness.
#[derive(Parser)]
#[command(name = "d3pi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one benchmark run and write CSV outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory from the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all variants for a range of agent counts and emit sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `5..30` or comma-separated list.
        #[arg(long)]
        agents: String,
    },
    /// Run the oracle-equivalence self checks.
    Selftest,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::NonConvergence { .. } => EXIT_NONCONVERGENCE,
                _ => EXIT_NUMERICAL,
            };
        }
    }
    EXIT_NUMERICAL
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let summary = run_benchmark(&cfg)?;
            println!(
                "{}: N={} cost={:.6} learning_steps={} outer_iterations={} -> {}",
                cfg.variant.as_str(),
                summary.n_agents,
                summary.final_cum_cost,
                summary.learning_steps,
                summary.outer_iterations,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Sweep { config, agents } => {
            let cfg = RunConfig::from_file(&config)?;
            let list = parse_agent_list(&agents)?;
            let rows = sweep_agents(&cfg, &list)?;
            for row in &rows {
                println!(
                    "N={:2}: lqr={:.4} on={:.4} off={:.4} spe_wall={:.3}s",
                    row.n_agents,
                    row.cost_lqr_baseline,
                    row.cost_d3pi_on,
                    row.cost_d3pi_off,
                    row.spe_wall_secs
                );
            }
            println!("summary -> {}", cfg.out_dir.join("sweep.csv").display());
            Ok(())
        }
        Command::Selftest => {
            let results = selftest();
            let mut ok = true;
            for (name, passed) in &results {
                println!("{}: {}", name, if *passed { "pass" } else { "FAIL" });
                ok &= *passed;
            }
            anyhow::ensure!(ok, "selftest failures");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
