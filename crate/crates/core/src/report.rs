// SPDX-License-Identifier: Apache-2.0

//! Run reports: line-delimited JSON records plus summary statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{BlockRef, SimTime};
use crate::committee::{Round, ValidatorId};
use crate::committer::LeaderSlot;
use crate::linearizer::CommitRecord;
use crate::simnet::{us_to_ms, EventCounts, Simulation};
use crate::validator::{LatencySample, RoundRecord};

#[derive(Clone, Debug)]
pub struct ValidatorReport {
    pub id: ValidatorId,
    pub honest: bool,
    pub crashed_at: Option<SimTime>,
    pub commit_log: Vec<CommitRecord>,
    pub commit_sequence: Vec<(LeaderSlot, BlockRef)>,
    pub rounds: Vec<RoundRecord>,
    pub proposals: Vec<(BlockRef, SimTime)>,
    pub quorum_at: BTreeMap<Round, SimTime>,
    pub latencies: Vec<LatencySample>,
    pub last_decided: Option<LeaderSlot>,
    pub undecided_tail: usize,
    pub highest_round: Round,
    pub rejected: u64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub validators: Vec<ValidatorReport>,
    pub events: EventCounts,
    pub summary: SummaryStats,
}

/// One line of `report.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportRecord {
    Validator {
        validator: ValidatorId,
        honest: bool,
        crashed_at_ms: Option<f64>,
        committed_leaders: usize,
        committed_blocks: usize,
        last_decided: Option<LeaderSlot>,
        undecided_tail: usize,
        highest_round: Round,
        rejected: u64,
    },
    Latency {
        validator: ValidatorId,
        client: u32,
        seq: u64,
        created_ms: f64,
        committed_ms: f64,
        latency_ms: f64,
    },
    Round {
        validator: ValidatorId,
        round: Round,
        entered_ms: f64,
        left_ms: f64,
        duration_ms: f64,
        waited_full_timeout: bool,
        forced_by_blames: bool,
    },
    Proposal {
        validator: ValidatorId,
        block_ref: BlockRef,
        sim_time_ms: f64,
    },
    Events(EventCounts),
}

/// Summary over honest validators. Percentiles are nearest-rank; empty
/// samples are omitted rather than reported as zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p90_latency_ms: Option<f64>,
    pub committed_tx_count: usize,
    pub committed_slot_count: usize,
    pub undecided_tail_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_round_duration_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_round_duration_ms: Option<f64>,
    pub full_timeout_rounds: usize,
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

impl SummaryStats {
    pub fn from_records(records: &[ReportRecord]) -> Self {
        let honest: BTreeSet<ValidatorId> = records
            .iter()
            .filter_map(|r| match r {
                ReportRecord::Validator { validator, honest: true, .. } => Some(*validator),
                _ => None,
            })
            .collect();
        let mut latencies = Vec::new();
        let mut durations = Vec::new();
        let mut stats = SummaryStats::default();
        for r in records {
            match r {
                ReportRecord::Latency { validator, latency_ms, .. } if honest.contains(validator) => {
                    latencies.push(*latency_ms)
                }
                ReportRecord::Round { validator, duration_ms, waited_full_timeout, .. }
                    if honest.contains(validator) =>
                {
                    durations.push(*duration_ms);
                    stats.full_timeout_rounds += usize::from(*waited_full_timeout);
                }
                ReportRecord::Validator {
                    honest: true,
                    committed_leaders,
                    undecided_tail,
                    ..
                } => {
                    stats.committed_slot_count = stats.committed_slot_count.max(*committed_leaders);
                    stats.undecided_tail_length = stats.undecided_tail_length.max(*undecided_tail);
                }
                _ => {}
            }
        }
        stats.committed_tx_count = latencies.len();
        let latencies = sorted(latencies);
        stats.median_latency_ms = percentile(&latencies, 50.0);
        stats.p90_latency_ms = percentile(&latencies, 90.0);
        if !durations.is_empty() {
            stats.mean_round_duration_ms = Some(durations.iter().sum::<f64>() / durations.len() as f64);
        }
        stats.median_round_duration_ms = percentile(&sorted(durations), 50.0);
        stats
    }
}

impl RunReport {
    pub fn collect(sim: &Simulation) -> Self {
        let validators: Vec<_> = sim
            .validators()
            .iter()
            .map(|v| {
                let m = v.metrics();
                ValidatorReport {
                    id: v.id(),
                    honest: sim.scenario().is_honest(v.id()),
                    crashed_at: v.crashed_at(),
                    commit_log: v.commit_log().to_vec(),
                    commit_sequence: v.linearizer().commit_sequence().to_vec(),
                    rounds: m.rounds.clone(),
                    proposals: m.proposals.clone(),
                    quorum_at: m.quorum_at.clone(),
                    latencies: m.latencies.clone(),
                    last_decided: v.linearizer().last_decided(),
                    undecided_tail: sim.undecided_tail(v.id()),
                    highest_round: v.store().highest_round(),
                    rejected: m.rejected,
                }
            })
            .collect();
        let mut report = Self { validators, events: sim.counts(), summary: SummaryStats::default() };
        report.summary = SummaryStats::from_records(&report.records());
        report
    }

    pub fn honest(&self) -> impl Iterator<Item = &ValidatorReport> {
        self.validators.iter().filter(|v| v.honest)
    }

    pub fn records(&self) -> Vec<ReportRecord> {
        let mut out = Vec::new();
        for v in &self.validators {
            out.push(ReportRecord::Validator {
                validator: v.id,
                honest: v.honest,
                crashed_at_ms: v.crashed_at.map(us_to_ms),
                committed_leaders: v.commit_sequence.len(),
                committed_blocks: v.commit_log.len(),
                last_decided: v.last_decided,
                undecided_tail: v.undecided_tail,
                highest_round: v.highest_round,
                rejected: v.rejected,
            });
        }
        for v in &self.validators {
            for r in &v.rounds {
                out.push(ReportRecord::Round {
                    validator: v.id,
                    round: r.round,
                    entered_ms: us_to_ms(r.entered_at),
                    left_ms: us_to_ms(r.left_at),
                    duration_ms: us_to_ms(r.duration()),
                    waited_full_timeout: r.waited_full_timeout,
                    forced_by_blames: r.forced_by_blames,
                });
            }
            for (block_ref, at) in &v.proposals {
                out.push(ReportRecord::Proposal { validator: v.id, block_ref: *block_ref, sim_time_ms: us_to_ms(*at) });
            }
            for s in &v.latencies {
                out.push(ReportRecord::Latency {
                    validator: v.id,
                    client: s.client,
                    seq: s.seq,
                    created_ms: us_to_ms(s.created_at),
                    committed_ms: us_to_ms(s.committed_at),
                    latency_ms: us_to_ms(s.committed_at - s.created_at),
                });
            }
        }
        out.push(ReportRecord::Events(self.events));
        out
    }

    pub fn write_records(&self, w: &mut impl Write) -> io::Result<()> {
        write_jsonl(w, &self.records())
    }
}

pub fn write_jsonl<T: Serialize>(w: &mut impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<Vec<T>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ReadError::Corrupt { line: i + 1, source })?);
    }
    Ok(out)
}
