// SPDX-License-Identifier: Apache-2.0

//! Leader-slot decisions over a local DAG.
//!
//! Waves are two rounds long (propose, decide) and a new wave starts every
//! round. A leader block is directly committed with `4f + 1` supports from
//! its decision round and directly skipped when `4f + 1` decision blocks
//! blame its slot. Otherwise it is decided through the first committed or
//! undecided leader after its wave (the anchor): commit when at least
//! `2f + 1` of its supports lie in the anchor's causal history, skip when
//! they do not, undecided when the anchor is undecided or missing.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::block::BlockRef;
use crate::committee::{Committee, LeaderSchedule, Round, StakeAggregator, ValidatorId};
use crate::dag::DagStore;

pub const WAVE_LENGTH: Round = 2;

/// Wave arithmetic for one `(wave offset, leader rank)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decider {
    pub wave_offset: Round,
    pub leader_offset: usize,
}

impl Decider {
    pub fn new(wave_offset: Round, leader_offset: usize) -> Self {
        assert!(wave_offset < WAVE_LENGTH, "wave offset {wave_offset} out of range");
        Self { wave_offset, leader_offset }
    }

    /// Decider whose waves start at `round`.
    pub fn for_round(round: Round, leader_offset: usize) -> Self {
        Self::new(round % WAVE_LENGTH, leader_offset)
    }

    pub fn wave_number(&self, round: Round) -> u64 {
        (round - self.wave_offset) / WAVE_LENGTH
    }

    pub fn propose_round(&self, wave: u64) -> Round {
        wave * WAVE_LENGTH + self.wave_offset
    }

    pub fn decision_round(&self, wave: u64) -> Round {
        self.propose_round(wave) + WAVE_LENGTH - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LeaderSlot {
    pub round: Round,
    pub rank: usize,
    pub authority: ValidatorId,
}

/// Sequencing order: by round, then by rank (rank 0 first).
impl Ord for LeaderSlot {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.round, self.rank, self.authority).cmp(&(other.round, other.rank, other.authority))
    }
}

impl PartialOrd for LeaderSlot {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LeaderSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}/{}:{}", self.round, self.rank, self.authority)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Commit(BlockRef),
    Skip,
    Undecided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LeaderStatus {
    pub slot: LeaderSlot,
    pub decision: Decision,
}

impl LeaderStatus {
    pub fn is_decided(&self) -> bool {
        !matches!(self.decision, Decision::Undecided)
    }

    pub fn committed(&self) -> Option<BlockRef> {
        match self.decision {
            Decision::Commit(r) => Some(r),
            _ => None,
        }
    }
}

/// Read-only decision logic over one DAG snapshot.
pub struct Committer<'a> {
    store: &'a DagStore,
    committee: &'a Committee,
    schedule: &'a dyn LeaderSchedule,
}

impl<'a> Committer<'a> {
    /// Uses the committee's round-robin schedule.
    pub fn new(store: &'a DagStore, committee: &'a Committee) -> Self {
        Self { store, committee, schedule: committee }
    }

    pub fn with_schedule(
        store: &'a DagStore,
        committee: &'a Committee,
        schedule: &'a dyn LeaderSchedule,
    ) -> Self {
        Self { store, committee, schedule }
    }

    pub fn store(&self) -> &'a DagStore {
        self.store
    }

    fn slot(&self, decider: &Decider, wave: u64) -> LeaderSlot {
        let round = decider.propose_round(wave);
        LeaderSlot {
            round,
            rank: decider.leader_offset,
            authority: self.schedule.leader(round, decider.leader_offset),
        }
    }

    /// At least `4f + 1` distinct decision-round authors include `leader`.
    pub fn supported_leader(&self, decider: &Decider, wave: u64, leader: &BlockRef) -> bool {
        let mut agg = StakeAggregator::new(self.committee.quorum_threshold());
        self.store
            .blocks_by_round(decider.decision_round(wave))
            .into_iter()
            .filter(|b| b.supports(leader))
            .any(|b| agg.add(b.author()))
    }

    /// At least `4f + 1` distinct decision-round authors blame the leader's
    /// slot, i.e. reference no block of the leader at its round. This also
    /// covers an empty slot.
    pub fn skipped_leader(&self, decider: &Decider, wave: u64, leader: ValidatorId) -> bool {
        let round = decider.propose_round(wave);
        let mut agg = StakeAggregator::new(self.committee.quorum_threshold());
        self.store
            .blocks_by_round(decider.decision_round(wave))
            .into_iter()
            .filter(|b| b.omits_author(leader, round))
            .any(|b| agg.add(b.author()))
    }

    pub fn try_direct_decide(&self, decider: &Decider, wave: u64) -> LeaderStatus {
        let slot = self.slot(decider, wave);
        let decision = if self.skipped_leader(decider, wave, slot.authority) {
            Decision::Skip
        } else {
            self.store
                .blocks_at_authority_round(slot.authority, slot.round)
                .into_iter()
                .map(|b| b.reference())
                .find(|leader| self.supported_leader(decider, wave, leader))
                .map_or(Decision::Undecided, Decision::Commit)
        };
        LeaderStatus { slot, decision }
    }

    /// At least `2f + 1` distinct decision-round authors support `leader`
    /// with blocks in the causal history of `anchor`.
    pub fn thick_link(&self, anchor: &BlockRef, leader: &BlockRef) -> bool {
        let decision_round = leader.round + WAVE_LENGTH - 1;
        let mut agg = StakeAggregator::new(self.committee.indirect_threshold());
        self.store
            .ancestors_at_round(anchor, decision_round)
            .into_iter()
            .filter_map(|r| self.store.get(&r))
            .filter(|b| b.supports(leader))
            .any(|b| agg.add(b.author()))
    }

    /// `later` holds the statuses of every slot above this wave's decision
    /// round, in sequencing order.
    pub fn try_indirect_decide(&self, decider: &Decider, wave: u64, later: &[LeaderStatus]) -> LeaderStatus {
        let slot = self.slot(decider, wave);
        let decision_round = decider.decision_round(wave);
        let anchor = later
            .iter()
            .find(|s| s.slot.round > decision_round && s.decision != Decision::Skip);
        let decision = match anchor.map(|s| s.decision) {
            Some(Decision::Commit(anchor)) => self
                .store
                .blocks_at_authority_round(slot.authority, slot.round)
                .into_iter()
                .map(|b| b.reference())
                .find(|leader| self.thick_link(&anchor, leader))
                .map_or(Decision::Skip, Decision::Commit),
            _ => Decision::Undecided,
        };
        LeaderStatus { slot, decision }
    }

    /// Decides every slot in rounds `committed_round + 1 ..= highest_round`,
    /// processing from the highest round and lowest rank downwards. The
    /// result is in sequencing order.
    pub fn try_decide(&self, committed_round: Round, highest_round: Round) -> Vec<LeaderStatus> {
        // Built in processing order; reversed views give sequencing order.
        let mut processed: Vec<LeaderStatus> = Vec::new();
        let mut round = highest_round;
        while round > committed_round {
            for rank in (0..self.schedule.slot_count(round)).rev() {
                let decider = Decider::for_round(round, rank);
                let wave = decider.wave_number(round);
                let mut status = self.try_direct_decide(&decider, wave);
                if !status.is_decided() {
                    let later: Vec<_> = processed.iter().rev().copied().collect();
                    status = self.try_indirect_decide(&decider, wave, &later);
                }
                processed.push(status);
            }
            round -= 1;
        }
        processed.reverse();
        processed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Block;
    use crate::crypto::MacSigner;

    #[test]
    fn wave_arithmetic() {
        let d = Decider::new(1, 0);
        assert_eq!(d.wave_number(5), 2);
        assert_eq!(d.propose_round(2), 5);
        assert_eq!(d.decision_round(2), 6);
        let d = Decider::new(0, 0);
        assert_eq!(d.wave_number(4), 2);
        assert_eq!(d.decision_round(2), 5);
        for r in 0..50 {
            let d = Decider::for_round(r, 0);
            assert_eq!(d.propose_round(d.wave_number(r)), r);
        }
    }

    #[test]
    #[should_panic]
    fn wave_offset_bound() {
        Decider::new(2, 0);
    }

    fn round_blocks(
        store: &mut DagStore,
        round: Round,
        prev: &[BlockRef],
        authors: &[u32],
        omit: Option<BlockRef>,
        s: &MacSigner,
    ) -> Vec<BlockRef> {
        authors
            .iter()
            .map(|&a| {
                let own = *prev.iter().find(|r| r.author.0 == a).unwrap();
                let parents: Vec<_> = std::iter::once(own)
                    .chain(prev.iter().filter(|r| r.author.0 != a && Some(**r) != omit).copied())
                    .collect();
                let b = Block::new(ValidatorId(a), round, vec![], parents, s);
                let r = b.reference();
                store.insert(b);
                r
            })
            .collect()
    }

    #[test]
    fn below_both_thresholds_is_undecided() {
        // n = 6, leader at round 1 is V1; 4 supports and 2 blames.
        let c = Committee::new(6).unwrap();
        let s = MacSigner::new(0);
        let mut store = DagStore::new(&c);
        let g = crate::dag::tests::genesis_refs(&c);
        let r1 = round_blocks(&mut store, 1, &g, &[0, 1, 2, 3, 4, 5], None, &s);
        let leader = r1[1];
        round_blocks(&mut store, 2, &r1, &[0, 1, 2, 3], None, &s);
        round_blocks(&mut store, 2, &r1, &[4, 5], Some(leader), &s);
        let committer = Committer::new(&store, &c);
        let d = Decider::for_round(1, 0);
        let w = d.wave_number(1);
        assert!(!committer.supported_leader(&d, w, &leader));
        assert!(!committer.skipped_leader(&d, w, leader.author));
        assert_eq!(committer.try_direct_decide(&d, w).decision, Decision::Undecided);
    }

    #[test]
    fn empty_slot_with_full_decision_round_is_skipped() {
        let c = Committee::new(6).unwrap();
        let s = MacSigner::new(0);
        let mut store = DagStore::new(&c);
        let g = crate::dag::tests::genesis_refs(&c);
        // V1 leads round 1 but never proposes.
        let r1 = round_blocks(&mut store, 1, &g, &[0, 2, 3, 4, 5], None, &s);
        let committer = Committer::new(&store, &c);
        let d = Decider::for_round(1, 0);
        assert_eq!(committer.try_direct_decide(&d, 0).decision, Decision::Undecided);
        round_blocks(&mut store, 2, &r1, &[0, 2, 3, 4, 5], None, &s);
        let committer = Committer::new(&store, &c);
        assert_eq!(committer.try_direct_decide(&d, 0).decision, Decision::Skip);
    }

    #[test]
    fn empty_range_is_empty() {
        let c = Committee::new(6).unwrap();
        let store = DagStore::new(&c);
        assert!(Committer::new(&store, &c).try_decide(3, 3).is_empty());
    }

    #[test]
    fn slot_order_is_round_then_rank() {
        let a = LeaderSlot { round: 1, rank: 1, authority: ValidatorId(5) };
        let b = LeaderSlot { round: 2, rank: 0, authority: ValidatorId(0) };
        let c = LeaderSlot { round: 2, rank: 1, authority: ValidatorId(1) };
        assert!(a < b && b < c);
    }
}
