// SPDX-License-Identifier: Apache-2.0

//! Validator set for an `n = 5f + 1` committee with equal stake.
//!
//! The committee owns the two quorum thresholds used by the decision rules
//! (`4f + 1` for direct decisions, `2f + 1` for indirect decisions and
//! early block production) and the round-robin leader schedule.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Round = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

impl ValidatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommitteeError {
    #[error("committee size {0} is not of the form 5f + 1 with f >= 1")]
    InvalidSize(usize),
    #[error("leaders per round must be in [1, {max}], got {got}")]
    InvalidLeaderCount { got: usize, max: usize },
    #[error("rank {rank} out of range for round {round} ({slots} leader slots)")]
    RankOutOfRange { round: Round, rank: usize, slots: usize },
}

/// Assigns leader slots to validators.
///
/// Rank 0 is the highest-priority slot of a round. A round may have zero
/// slots (e.g. odd rounds when waves are not pipelined).
pub trait LeaderSchedule {
    fn slot_count(&self, round: Round) -> usize;

    /// Leader for `(round, rank)`. Callers must keep `rank < slot_count(round)`.
    fn leader(&self, round: Round, rank: usize) -> ValidatorId;

    fn leaders(&self, round: Round) -> Vec<ValidatorId> {
        (0..self.slot_count(round))
            .map(|rank| self.leader(round, rank))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Committee {
    size: usize,
    faults: usize,
    leaders_per_round: usize,
    pipelined: bool,
}

impl Committee {
    pub fn new(size: usize) -> Result<Self, CommitteeError> {
        if size < 6 || (size - 1) % 5 != 0 {
            return Err(CommitteeError::InvalidSize(size));
        }
        Ok(Self {
            size,
            faults: (size - 1) / 5,
            leaders_per_round: 1,
            pipelined: true,
        })
    }

    /// Between 1 and `4f + 1` leader slots per round.
    pub fn with_leaders_per_round(mut self, leaders: usize) -> Result<Self, CommitteeError> {
        let max = self.quorum_threshold();
        if leaders == 0 || leaders > max {
            return Err(CommitteeError::InvalidLeaderCount { got: leaders, max });
        }
        self.leaders_per_round = leaders;
        Ok(self)
    }

    /// With pipelining off, only even rounds carry leader slots (one wave
    /// every two rounds); with it on, every round starts a wave.
    pub fn with_pipelining(mut self, pipelined: bool) -> Self {
        self.pipelined = pipelined;
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn max_faults(&self) -> usize {
        self.faults
    }

    pub fn leaders_per_round(&self) -> usize {
        self.leaders_per_round
    }

    pub fn pipelined(&self) -> bool {
        self.pipelined
    }

    /// `4f + 1`: parents per block, direct commit and direct skip.
    pub fn quorum_threshold(&self) -> usize {
        4 * self.faults + 1
    }

    /// `2f + 1`: thick links and early block production.
    pub fn indirect_threshold(&self) -> usize {
        2 * self.faults + 1
    }

    /// `(direct, indirect)` thresholds.
    pub fn quorum_thresholds(&self) -> (usize, usize) {
        (self.quorum_threshold(), self.indirect_threshold())
    }

    /// Parent-collection threshold of the unsafe variant: `ceil(2n / 3)`.
    pub fn two_thirds_threshold(&self) -> usize {
        (2 * self.size).div_ceil(3)
    }

    pub fn contains(&self, id: ValidatorId) -> bool {
        id.index() < self.size
    }

    pub fn validators(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        (0..self.size as u32).map(ValidatorId)
    }

    /// Round-robin schedule: `V[(round + rank) mod n]`.
    pub fn elect_leader(&self, round: Round, rank: usize) -> Result<ValidatorId, CommitteeError> {
        let slots = self.slot_count(round);
        if rank >= slots {
            return Err(CommitteeError::RankOutOfRange { round, rank, slots });
        }
        Ok(self.leader(round, rank))
    }
}

impl LeaderSchedule for Committee {
    fn slot_count(&self, round: Round) -> usize {
        if self.pipelined || round % 2 == 0 {
            self.leaders_per_round
        } else {
            0
        }
    }

    fn leader(&self, round: Round, rank: usize) -> ValidatorId {
        let index = (round + rank as u64) % self.size as u64;
        ValidatorId(index as u32)
    }
}

/// Counts distinct validators (one unit of stake each) toward a threshold.
#[derive(Clone, Debug)]
pub struct StakeAggregator {
    votes: BTreeSet<ValidatorId>,
    threshold: usize,
}

impl StakeAggregator {
    pub fn new(threshold: usize) -> Self {
        Self {
            votes: BTreeSet::new(),
            threshold,
        }
    }

    /// Records a vote; returns true once the threshold is reached.
    pub fn add(&mut self, voter: ValidatorId) -> bool {
        self.votes.insert(voter);
        self.reached()
    }

    pub fn reached(&self) -> bool {
        self.votes.len() >= self.threshold
    }

    pub fn stake(&self) -> usize {
        self.votes.len()
    }
}
