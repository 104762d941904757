use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iaad_core::config::{effective_seed, parse_config, RunConfig, SEED_ENV};
use iaad_core::fusion::PolicyMode;
use iaad_core::harness::{cmd_compare, cmd_run, cmd_table2, summary_line, HarnessError};

#[derive(Parser)]
#[command(name = "iaad-sim", version, about = "Cooperative driving V2X fusion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation (and its sweep, if configured).
    Run {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<PolicyMode>,
        /// Replay a recorded latency trace on both streams.
        #[arg(long)]
        link_trace: Option<PathBuf>,
    },
    /// Write the approach-distance table.
    Table2 {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare two or more metrics reports.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
    },
}

fn parse_policy(s: &str) -> Result<PolicyMode, String> {
    PolicyMode::from_label(s).ok_or_else(|| format!("unknown policy `{s}` (intra, inter, planning, adaptive)"))
}

fn load(path: &std::path::Path, flag_seed: Option<u64>) -> Result<(RunConfig, u64), HarnessError> {
    let cfg = parse_config(path)?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = effective_seed(cfg.seed, env.as_deref(), flag_seed)?;
    Ok((cfg, seed))
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config, out, seed, policy, link_trace } => {
            let (mut cfg, seed) = load(&config, seed)?;
            if let Some(mode) = policy {
                cfg.policy.mode = mode;
            }
            if let Some(trace) = link_trace {
                cfg.link.model = None;
                cfg.link.trace = Some(trace);
                cfg.link.heavy_trace = None;
            }
            let report = cmd_run(&cfg, seed, &out)?;
            println!("{}", summary_line(&report));
        }
        Command::Table2 { config, out } => {
            let (cfg, seed) = load(&config, None)?;
            print!("{}", cmd_table2(&cfg, seed, &out)?);
        }
        Command::Compare { reports } => print!("{}", cmd_compare(&reports)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
