// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use duodag::harness::{self, HarnessError};

/// Deterministic simulator and log checker for the duodag consensus core.
#[derive(Debug, Parser)]
#[command(name = "duodag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write report.jsonl, summary.json and commits/V<i>.jsonl.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Seed for every random stream in the run.
        #[arg(long)]
        seed: u64,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        duration_ms: Option<f64>,
        #[arg(long)]
        leaders_per_round: Option<usize>,
        #[arg(long)]
        optimization: Option<bool>,
        /// UNSAFE: use ceil(2n/3) parents instead of 4f+1. Latency experiments only.
        #[arg(long)]
        unsafe_parent_threshold: bool,
    },
    /// Check that commit logs are duplicate-free and prefix-consistent.
    Verify {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Recompute the summary from a run directory or report.jsonl.
    Summarize { report: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            scenario,
            seed,
            out,
            duration_ms,
            leaders_per_round,
            optimization,
            unsafe_parent_threshold,
        } => {
            let mut s = harness::load_scenario(&scenario)?;
            s.seed = seed;
            if let Some(d) = duration_ms {
                s.timing.duration_ms = d;
            }
            if let Some(k) = leaders_per_round {
                s.committee.leaders_per_round = k;
            }
            if let Some(o) = optimization {
                s.protocol.optimization = o;
            }
            if unsafe_parent_threshold {
                eprintln!("warning: unsafe parent threshold enabled; safety is not guaranteed");
                s.protocol.unsafe_parent_threshold = true;
            }
            s.validate().map_err(|e| HarnessError::Usage(format!("invalid scenario: {e}")))?;
            let report = harness::cmd_run(&s, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary).expect("summary serializes"));
            Ok(())
        }
        Command::Verify { logs } => {
            let n = harness::cmd_verify(&logs)?;
            println!("ok: {n} commit logs consistent");
            Ok(())
        }
        Command::Summarize { report } => {
            let stats = harness::cmd_summarize(&report)?;
            println!("{}", serde_json::to_string_pretty(&stats).expect("summary serializes"));
            Ok(())
        }
    }
}
