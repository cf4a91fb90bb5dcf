// SPDX-License-Identifier: Apache-2.0

//! File-level commands behind the `duodag` binary.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linearizer::CommitRecord;
use crate::report::{read_jsonl, write_jsonl, ReportRecord, RunReport, SummaryStats};
use crate::simnet::{Scenario, SimError, Simulation};

pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMMITS_DIR: &str = "commits";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Watchdog(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Verification(_) => 2,
            HarnessError::Watchdog(_) => 3,
        }
    }
}

fn usage(context: &str, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Usage(format!("{context}: {e}"))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| usage(&path.display().to_string(), e))?;
    Scenario::from_toml(&text).map_err(|e| usage(&path.display().to_string(), e))
}

pub fn commit_log_path(out_dir: &Path, validator: u32) -> PathBuf {
    out_dir.join(COMMITS_DIR).join(format!("V{validator}.jsonl"))
}

/// Runs `scenario` and writes `report.jsonl`, `summary.json` and one commit
/// log per honest validator under `out_dir`.
pub fn cmd_run(scenario: &Scenario, out_dir: &Path) -> Result<RunReport, HarnessError> {
    let mut sim = Simulation::new(scenario.clone()).map_err(|e| usage("invalid scenario", e))?;
    sim.run().map_err(|e| match e {
        SimError::Watchdog(_) => HarnessError::Watchdog(e.to_string()),
        SimError::Scenario(e) => usage("invalid scenario", e),
    })?;
    let report = sim.report();
    write_outputs(&report, out_dir).map_err(|e| usage(&out_dir.display().to_string(), e))?;
    Ok(report)
}

fn write_outputs(report: &RunReport, out_dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(out_dir.join(COMMITS_DIR))?;
    let mut w = BufWriter::new(File::create(out_dir.join(REPORT_FILE))?);
    report.write_records(&mut w)?;
    w.flush()?;
    let summary = serde_json::to_string_pretty(&report.summary)?;
    fs::write(out_dir.join(SUMMARY_FILE), summary + "\n")?;
    for v in report.honest() {
        let mut w = BufWriter::new(File::create(commit_log_path(out_dir, v.id.0))?);
        write_jsonl(&mut w, &v.commit_log)?;
        w.flush()?;
    }
    Ok(())
}

/// Checks every log for duplicates and every pair for prefix consistency on
/// `(leader_slot, block_ref, emit_index)`. Observer and commit time differ
/// between validators by construction and are not compared.
pub fn verify_logs(logs: &[(String, Vec<CommitRecord>)]) -> Result<(), String> {
    for (name, log) in logs {
        let mut seen = HashSet::new();
        for (i, record) in log.iter().enumerate() {
            if !seen.insert(record.block_ref) {
                return Err(format!("{name} line {}: block {:?} delivered twice", i + 1, record.block_ref));
            }
        }
    }
    for (i, (name_a, a)) in logs.iter().enumerate() {
        for (name_b, b) in &logs[i + 1..] {
            if let Some(k) = a.iter().zip(b).position(|(x, y)| x.agreement_key() != y.agreement_key()) {
                return Err(format!(
                    "{name_a} line {line} {:?} != {name_b} line {line} {:?}",
                    a[k].agreement_key(),
                    b[k].agreement_key(),
                    line = k + 1,
                ));
            }
        }
    }
    Ok(())
}

pub fn read_commit_log(path: &Path) -> Result<Vec<CommitRecord>, HarnessError> {
    let file = File::open(path).map_err(|e| usage(&path.display().to_string(), e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| usage(&path.display().to_string(), e))
}

pub fn cmd_verify(paths: &[PathBuf]) -> Result<usize, HarnessError> {
    if paths.len() < 2 {
        return Err(HarnessError::Usage("verify needs at least two commit logs".into()));
    }
    let logs = paths
        .iter()
        .map(|p| Ok((p.display().to_string(), read_commit_log(p)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    verify_logs(&logs).map_err(HarnessError::Verification)?;
    Ok(logs.len())
}

/// Accepts a run directory or a `report.jsonl` path.
pub fn cmd_summarize(path: &Path) -> Result<SummaryStats, HarnessError> {
    let file_path = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let file = File::open(&file_path).map_err(|e| usage(&file_path.display().to_string(), e))?;
    let records: Vec<ReportRecord> =
        read_jsonl(BufReader::new(file)).map_err(|e| usage(&file_path.display().to_string(), e))?;
    if !records.iter().any(|r| matches!(r, ReportRecord::Validator { .. })) {
        return Err(usage(&file_path.display().to_string(), "no validator records"));
    }
    Ok(SummaryStats::from_records(&records))
}
