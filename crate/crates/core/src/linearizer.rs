// SPDX-License-Identifier: Apache-2.0

//! Commit sequence and total block order.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::block::BlockRef;
use crate::committee::ValidatorId;
use crate::committer::{Committer, Decision, LeaderSlot};
use crate::dag::DagStore;

/// One block in the total order, attributed to the committed leader whose
/// sub-DAG delivered it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OrderedBlock {
    pub leader_slot: LeaderSlot,
    pub block_ref: BlockRef,
    pub emit_index: u64,
}

/// Line record of a validator's commit log. Field order is fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub observer: ValidatorId,
    pub leader_slot: LeaderSlot,
    pub block_ref: BlockRef,
    pub emit_index: u64,
    pub sim_time_ms: f64,
}

impl CommitRecord {
    /// The part every honest validator must agree on.
    pub fn agreement_key(&self) -> (LeaderSlot, BlockRef, u64) {
        (self.leader_slot, self.block_ref, self.emit_index)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommitDelta {
    pub leaders: Vec<(LeaderSlot, BlockRef)>,
    pub blocks: Vec<OrderedBlock>,
}

/// Append-only commit sequence plus the set of already-delivered blocks.
#[derive(Clone, Debug, Default)]
pub struct Linearizer {
    leaders: Vec<(LeaderSlot, BlockRef)>,
    last_decided: Option<LeaderSlot>,
    emitted: HashSet<BlockRef>,
    next_index: u64,
}

impl Linearizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn commit_sequence(&self) -> &[(LeaderSlot, BlockRef)] {
        &self.leaders
    }

    /// Highest slot of the decided prefix.
    pub fn last_decided(&self) -> Option<LeaderSlot> {
        self.last_decided
    }

    pub fn delivered(&self) -> usize {
        self.emitted.len()
    }

    pub fn is_delivered(&self, r: &BlockRef) -> bool {
        self.emitted.contains(r)
    }

    /// Decides slots above the decided prefix, appends the newly committed
    /// leaders (skips are passed over, the first undecided slot stops the
    /// walk) and linearizes their sub-DAGs.
    pub fn extend_commit_sequence(&mut self, committer: &Committer<'_>) -> CommitDelta {
        let store = committer.store();
        // Re-evaluate the round of the last decided slot: later ranks of that
        // round may still be open.
        let committed_round = self.last_decided.map_or(0, |s| s.round.saturating_sub(1));
        let statuses = committer.try_decide(committed_round, store.highest_round());
        let mut leaders = Vec::new();
        for status in statuses {
            if self.last_decided.is_some_and(|last| status.slot <= last) {
                continue;
            }
            match status.decision {
                Decision::Undecided => break,
                Decision::Skip => {}
                Decision::Commit(block) => leaders.push((status.slot, block)),
            }
            self.last_decided = Some(status.slot);
        }
        let blocks = self.linearize_sub_dags(&leaders, store);
        self.leaders.extend_from_slice(&leaders);
        CommitDelta { leaders, blocks }
    }

    /// For each leader in order, emits its not-yet-delivered causal history
    /// sorted by (round, author, digest). The leader closes its own delta.
    pub fn linearize_sub_dags(&mut self, leaders: &[(LeaderSlot, BlockRef)], store: &DagStore) -> Vec<OrderedBlock> {
        let mut out = Vec::new();
        for &(slot, leader) in leaders {
            // Delivered blocks have delivered histories, so they bound the walk.
            let mut delta = store.causal_history(&leader, |r| self.emitted.contains(r));
            delta.sort();
            debug_assert!(delta.last().is_none_or(|last| *last == leader));
            for block_ref in delta {
                self.emitted.insert(block_ref);
                out.push(OrderedBlock {
                    leader_slot: slot,
                    block_ref,
                    emit_index: self.next_index,
                });
                self.next_index += 1;
            }
        }
        out
    }
}
