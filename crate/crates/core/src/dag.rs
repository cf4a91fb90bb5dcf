// SPDX-License-Identifier: Apache-2.0

//! Round- and author-indexed block storage.
//!
//! A `(author, round)` pair may hold several blocks when the author
//! equivocates. Every stored block has its full causal history stored;
//! blocks with unknown parents wait in a bounded pending buffer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::block::{Block, BlockRef};
use crate::committee::{Committee, Round, ValidatorId};
use crate::crypto::Signer;

pub const DEFAULT_PENDING_CAPACITY: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Error)]
pub enum RejectReason {
    #[error("bad signature")]
    BadSignature,
    #[error("unknown author")]
    UnknownAuthor,
    #[error("parent from a round other than round - 1")]
    BadParentRound,
    #[error("fewer parents than required")]
    InsufficientParents,
    #[error("two parents by the same author")]
    DuplicateParentAuthor,
    #[error("first parent is not the author's own previous block")]
    MissingSelfParent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validation {
    Accepted,
    /// Structurally valid; these parents are not stored yet.
    Suspended(BTreeSet<BlockRef>),
    Rejected(RejectReason),
}

/// Checks a block against the committee and the local DAG.
///
/// `min_parents` is `4f + 1` for the protocol proper; the unsafe variant
/// lowers it.
pub fn validate_block(
    block: &Block,
    store: &DagStore,
    committee: &Committee,
    signer: &dyn Signer,
    min_parents: usize,
) -> Validation {
    use RejectReason::*;
    if !committee.contains(block.author()) {
        return Validation::Rejected(UnknownAuthor);
    }
    if block.is_genesis() {
        // Only the canonical genesis is acceptable at round 0.
        return if block.reference() == Block::genesis(block.author()).reference() {
            Validation::Accepted
        } else {
            Validation::Rejected(BadParentRound)
        };
    }
    if !signer.verify(block.author(), &block.digest(), block.signature()) {
        return Validation::Rejected(BadSignature);
    }
    let parents = block.parents();
    if parents.iter().any(|p| p.round + 1 != block.round()) {
        return Validation::Rejected(BadParentRound);
    }
    let mut authors = BTreeSet::new();
    if !parents.iter().all(|p| authors.insert(p.author)) {
        return Validation::Rejected(DuplicateParentAuthor);
    }
    if parents.iter().any(|p| !committee.contains(p.author)) {
        return Validation::Rejected(UnknownAuthor);
    }
    if parents.len() < min_parents {
        return Validation::Rejected(InsufficientParents);
    }
    if parents.first().map(|p| p.author) != Some(block.author()) {
        return Validation::Rejected(MissingSelfParent);
    }
    let missing: BTreeSet<_> = parents
        .iter()
        .filter(|p| !store.contains(p))
        .copied()
        .collect();
    if missing.is_empty() {
        Validation::Accepted
    } else {
        Validation::Suspended(missing)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("pending buffer full ({0} blocks)")]
pub struct BufferFull(pub usize);

struct Pending {
    block: Arc<Block>,
    missing: BTreeSet<BlockRef>,
}

pub struct DagStore {
    blocks: HashMap<BlockRef, Arc<Block>>,
    // Per round, per author, block refs sorted by digest.
    index: BTreeMap<Round, BTreeMap<ValidatorId, Vec<BlockRef>>>,
    pending: HashMap<BlockRef, Pending>,
    waiters: HashMap<BlockRef, Vec<BlockRef>>,
    pending_capacity: usize,
}

impl DagStore {
    /// A store holding the genesis block of every validator.
    pub fn new(committee: &Committee) -> Self {
        let mut store = Self {
            blocks: HashMap::new(),
            index: BTreeMap::new(),
            pending: HashMap::new(),
            waiters: HashMap::new(),
            pending_capacity: DEFAULT_PENDING_CAPACITY,
        };
        for v in committee.validators() {
            store.insert(Block::genesis(v));
        }
        store
    }

    pub fn with_pending_capacity(mut self, capacity: usize) -> Self {
        self.pending_capacity = capacity;
        self
    }

    pub fn contains(&self, r: &BlockRef) -> bool {
        self.blocks.contains_key(r)
    }

    pub fn get(&self, r: &BlockRef) -> Option<&Arc<Block>> {
        self.blocks.get(r)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn highest_round(&self) -> Round {
        self.index.keys().next_back().copied().unwrap_or(0)
    }

    /// Inserts a block whose parents are all stored. Returns false if the
    /// block was already present.
    ///
    /// # Panics
    ///
    /// If a parent is missing or not from the previous round.
    pub fn insert(&mut self, block: impl Into<Arc<Block>>) -> bool {
        let block = block.into();
        let r = block.reference();
        if self.blocks.contains_key(&r) {
            return false;
        }
        for p in block.parents() {
            assert_eq!(p.round + 1, r.round, "parent {p:?} of {r:?} breaks round structure");
            assert!(self.blocks.contains_key(p), "parent {p:?} of {r:?} not stored");
        }
        let slot = self.index.entry(r.round).or_default().entry(r.author).or_default();
        let pos = slot.partition_point(|x| x.digest < r.digest);
        slot.insert(pos, r);
        self.blocks.insert(r, block);
        true
    }

    /// Inserts `block` and every pending block it unblocks. Returns the
    /// newly stored refs in insertion (causal) order.
    pub fn insert_and_resolve(&mut self, block: impl Into<Arc<Block>>) -> Vec<BlockRef> {
        let mut stored = Vec::new();
        let mut ready = vec![block.into()];
        while let Some(block) = ready.pop() {
            let r = block.reference();
            if !self.insert(block) {
                continue;
            }
            stored.push(r);
            for child in self.waiters.remove(&r).unwrap_or_default() {
                let Some(p) = self.pending.get_mut(&child) else {
                    continue;
                };
                p.missing.remove(&r);
                if p.missing.is_empty() {
                    let p = self.pending.remove(&child).unwrap();
                    ready.push(p.block);
                }
            }
        }
        stored
    }

    /// Parks a block until `missing` parents arrive. Returns the subset of
    /// `missing` that is not itself pending, i.e. what must be fetched.
    pub fn suspend(
        &mut self,
        block: impl Into<Arc<Block>>,
        missing: BTreeSet<BlockRef>,
    ) -> Result<Vec<BlockRef>, BufferFull> {
        let block = block.into();
        let r = block.reference();
        if self.pending.contains_key(&r) || self.blocks.contains_key(&r) {
            return Ok(Vec::new());
        }
        if self.pending.len() >= self.pending_capacity {
            return Err(BufferFull(self.pending_capacity));
        }
        let mut fetch = Vec::new();
        for m in &missing {
            self.waiters.entry(*m).or_default().push(r);
            if !self.pending.contains_key(m) {
                fetch.push(*m);
            }
        }
        self.pending.insert(r, Pending { block, missing });
        Ok(fetch)
    }

    pub fn is_pending(&self, r: &BlockRef) -> bool {
        self.pending.contains_key(r)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Blocks of a round, ordered by author then digest.
    pub fn blocks_by_round(&self, round: Round) -> Vec<&Arc<Block>> {
        self.index
            .get(&round)
            .into_iter()
            .flat_map(|authors| authors.values().flatten())
            .map(|r| &self.blocks[r])
            .collect()
    }

    /// All blocks by `author` at `round` (several under equivocation),
    /// ordered by digest.
    pub fn blocks_at_authority_round(&self, author: ValidatorId, round: Round) -> Vec<&Arc<Block>> {
        self.index
            .get(&round)
            .and_then(|authors| authors.get(&author))
            .into_iter()
            .flatten()
            .map(|r| &self.blocks[r])
            .collect()
    }

    pub fn block_exists_at_authority_round(&self, author: ValidatorId, round: Round) -> bool {
        self.index
            .get(&round)
            .and_then(|authors| authors.get(&author))
            .is_some_and(|v| !v.is_empty())
    }

    /// Number of distinct authors with a block at `round`.
    pub fn authors_at_round(&self, round: Round) -> usize {
        self.index.get(&round).map_or(0, |a| a.len())
    }

    /// True iff a parent path leads from `new` back to `old` (reflexive).
    pub fn link(&self, old: &BlockRef, new: &BlockRef) -> bool {
        if old == new {
            return self.contains(old);
        }
        if old.round >= new.round {
            return false;
        }
        self.ancestors_at_round(new, old.round).contains(old)
    }

    /// Blocks at `round` in the causal history of `from` (including `from`
    /// itself when it sits at `round`).
    pub fn ancestors_at_round(&self, from: &BlockRef, round: Round) -> HashSet<BlockRef> {
        let mut frontier: HashSet<BlockRef> = HashSet::new();
        if from.round < round || !self.contains(from) {
            return frontier;
        }
        frontier.insert(*from);
        for _ in round..from.round {
            frontier = frontier
                .iter()
                .flat_map(|r| self.blocks[r].parents().iter().copied())
                .collect();
        }
        frontier
    }

    /// Causal history of `from` (inclusive), skipping everything reachable
    /// only through blocks for which `stop` holds.
    pub fn causal_history(&self, from: &BlockRef, stop: impl Fn(&BlockRef) -> bool) -> Vec<BlockRef> {
        let mut seen = HashSet::new();
        let mut stack = vec![*from];
        let mut out = Vec::new();
        while let Some(r) = stack.pop() {
            if stop(&r) || !seen.insert(r) {
                continue;
            }
            let Some(block) = self.blocks.get(&r) else {
                continue;
            };
            out.push(r);
            stack.extend(block.parents().iter().copied());
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.blocks.values()
    }
}

/// Support check: the leader triplet appears among the parents.
pub fn is_support(support: &Block, leader: &BlockRef) -> bool {
    support.supports(leader)
}
