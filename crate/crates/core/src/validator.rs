// SPDX-License-Identifier: Apache-2.0

//! Per-validator state machine.
//!
//! A validator is driven by three inputs (block bytes from a peer, a fired
//! timer, a client transaction) and answers with [`Effect`]s that the host
//! (the simulator) carries out.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::block::{Block, BlockRef, SimTime, Transaction};
use crate::committee::{Committee, LeaderSchedule, Round, StakeAggregator, ValidatorId};
use crate::committer::Committer;
use crate::crypto::Signer;
use crate::dag::{validate_block, DagStore, Validation};
use crate::linearizer::{CommitRecord, Linearizer};

/// Client id reserved for equivocation markers; never counted as load.
pub const MARKER_CLIENT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Produces no block above `at_round`, then stops entirely.
    Crash { at_round: Round },
    /// Produces `copies` conflicting blocks per round. Each goes to a
    /// contiguous run of `ceil((n - 1) / copies)` peers, wrapping around.
    Equivocate { copies: usize },
}

#[derive(Clone, Debug)]
pub struct ValidatorConfig {
    pub delta: SimTime,
    pub optimization: bool,
    pub unsafe_parent_threshold: bool,
    pub max_parents: Option<usize>,
    pub max_block_txs: usize,
    pub mempool_capacity: usize,
    pub behavior: Behavior,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            delta: 100_000,
            optimization: true,
            unsafe_parent_threshold: false,
            max_parents: None,
            max_block_txs: 10_000,
            mempool_capacity: 1_000_000,
            behavior: Behavior::Honest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Block(Arc<Vec<u8>>),
    Fetch(Vec<BlockRef>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    Send { to: Vec<ValidatorId>, message: Message },
    Timer { at: SimTime },
}

/// FIFO queue of pending transactions.
#[derive(Clone, Debug)]
pub struct Mempool {
    queue: VecDeque<Transaction>,
    capacity: usize,
}

impl Mempool {
    pub fn new(capacity: usize) -> Self {
        Self { queue: VecDeque::new(), capacity }
    }

    /// False when full.
    pub fn push(&mut self, tx: Transaction) -> bool {
        if self.queue.len() >= self.capacity {
            return false;
        }
        self.queue.push_back(tx);
        true
    }

    pub fn drain(&mut self, max: usize) -> Vec<Transaction> {
        let take = max.min(self.queue.len());
        self.queue.drain(..take).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// How a validator left one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: Round,
    pub entered_at: SimTime,
    pub left_at: SimTime,
    /// A leader was still missing and the timeout was the reason to leave.
    pub waited_full_timeout: bool,
    /// A leader was missing and blames let the validator leave early.
    pub forced_by_blames: bool,
}

impl RoundRecord {
    pub fn duration(&self) -> SimTime {
        self.left_at - self.entered_at
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatencySample {
    pub client: u32,
    pub seq: u64,
    pub created_at: SimTime,
    pub committed_at: SimTime,
}

#[derive(Clone, Debug, Default)]
pub struct ValidatorMetrics {
    pub rounds: Vec<RoundRecord>,
    pub proposals: Vec<(BlockRef, SimTime)>,
    /// First time each round held `4f + 1` distinct authors locally.
    pub quorum_at: BTreeMap<Round, SimTime>,
    pub latencies: Vec<LatencySample>,
    pub rejected: u64,
    pub undecodable: u64,
    pub dropped_txs: u64,
    pub fetches_sent: u64,
}

pub struct Validator {
    id: ValidatorId,
    committee: Committee,
    config: ValidatorConfig,
    signer: Arc<dyn Signer>,
    store: DagStore,
    linearizer: Linearizer,
    round: Round,
    round_entered: SimTime,
    own: BTreeMap<Round, BlockRef>,
    mempool: Mempool,
    crashed_at: Option<SimTime>,
    halted: bool,
    log: Vec<CommitRecord>,
    metrics: ValidatorMetrics,
}

impl Validator {
    pub fn new(id: ValidatorId, committee: Committee, config: ValidatorConfig, signer: Arc<dyn Signer>) -> Self {
        let store = DagStore::new(&committee);
        let mempool = Mempool::new(config.mempool_capacity);
        let own = BTreeMap::from([(0, Block::genesis(id).reference())]);
        Self {
            id,
            committee,
            config,
            signer,
            store,
            linearizer: Linearizer::new(),
            round: 0,
            round_entered: 0,
            own,
            mempool,
            crashed_at: None,
            halted: false,
            log: Vec::new(),
            metrics: ValidatorMetrics::default(),
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn store(&self) -> &DagStore {
        &self.store
    }

    pub fn linearizer(&self) -> &Linearizer {
        &self.linearizer
    }

    pub fn commit_log(&self) -> &[CommitRecord] {
        &self.log
    }

    pub fn metrics(&self) -> &ValidatorMetrics {
        &self.metrics
    }

    pub fn mempool(&self) -> &Mempool {
        &self.mempool
    }

    pub fn crashed_at(&self) -> Option<SimTime> {
        self.crashed_at
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed_at.is_some()
    }

    /// No further blocks; deliveries are still processed.
    pub fn halt_proposals(&mut self) {
        self.halted = true;
    }

    pub fn behavior(&self) -> Behavior {
        self.config.behavior
    }

    /// Distinct round-`r` authors needed before moving past round `r`.
    pub fn min_parents(&self) -> usize {
        if self.config.unsafe_parent_threshold {
            self.committee.two_thirds_threshold()
        } else {
            self.committee.quorum_threshold()
        }
    }

    pub fn deadline(&self) -> SimTime {
        self.round_entered + 2 * self.config.delta
    }

    fn missing_leaders(&self) -> Vec<ValidatorId> {
        let r = self.round;
        (0..self.committee.slot_count(r))
            .map(|rank| self.committee.leader(r, rank))
            .filter(|l| !self.store.block_exists_at_authority_round(*l, r))
            .collect()
    }

    /// Every leader missing from the current round is blamed by at least
    /// `2f + 1` distinct next-round authors.
    pub fn force_due_to_leader_blames(&self) -> bool {
        let r = self.round;
        let next = self.store.blocks_by_round(r + 1);
        self.missing_leaders().iter().all(|leader| {
            let mut agg = StakeAggregator::new(self.committee.indirect_threshold());
            next.iter()
                .filter(|b| b.omits_author(*leader, r))
                .any(|b| agg.add(b.author()))
        })
    }

    pub fn ready_to_propose(&self, now: SimTime) -> bool {
        self.readiness(now).is_some()
    }

    /// `Some((waited_full_timeout, forced_by_blames))` when ready.
    fn readiness(&self, now: SimTime) -> Option<(bool, bool)> {
        if self.store.authors_at_round(self.round) < self.min_parents() {
            return None;
        }
        if self.missing_leaders().is_empty() {
            return Some((false, false));
        }
        if self.config.optimization && self.force_due_to_leader_blames() {
            return Some((false, true));
        }
        (now >= self.deadline()).then_some((true, false))
    }

    /// Builds the next block: own block first, then one block per other
    /// author of the current round, leaders preferred when capped.
    pub fn create_block(&mut self, extra: Option<Transaction>) -> Block {
        let r = self.round;
        let own = self.own[&r];
        let leaders: Vec<_> = (0..self.committee.slot_count(r))
            .map(|rank| self.committee.leader(r, rank))
            .collect();
        let mut seen = vec![self.id];
        let mut others: Vec<BlockRef> = Vec::new();
        for b in self.store.blocks_by_round(r) {
            if !seen.contains(&b.author()) {
                seen.push(b.author());
                others.push(b.reference());
            }
        }
        others.sort_by_key(|p| !leaders.contains(&p.author));
        if let Some(cap) = self.config.max_parents {
            others.truncate(cap.max(self.min_parents()).saturating_sub(1));
        }
        let mut parents = vec![own];
        parents.extend(others);
        let mut payload = self.mempool.drain(self.config.max_block_txs);
        payload.extend(extra);
        Block::new(self.id, r + 1, payload, parents, self.signer.as_ref())
    }

    pub fn start(&mut self, now: SimTime) -> Vec<Effect> {
        let mut effects = Vec::new();
        if let Behavior::Crash { at_round: 0 } = self.config.behavior {
            self.crashed_at = Some(now);
            return effects;
        }
        self.round_entered = now;
        effects.push(Effect::Timer { at: self.deadline() });
        self.try_advance(now, &mut effects);
        effects
    }

    pub fn on_transaction(&mut self, tx: Transaction) {
        if self.is_crashed() {
            return;
        }
        if !self.mempool.push(tx) {
            self.metrics.dropped_txs += 1;
        }
    }

    pub fn on_timer(&mut self, now: SimTime) -> Vec<Effect> {
        let mut effects = Vec::new();
        if !self.is_crashed() {
            self.try_advance(now, &mut effects);
        }
        effects
    }

    pub fn on_message(&mut self, from: ValidatorId, message: &Message, now: SimTime) -> Vec<Effect> {
        let mut effects = Vec::new();
        if self.is_crashed() {
            return effects;
        }
        match message {
            Message::Block(bytes) => self.on_block_bytes(from, bytes, now, &mut effects),
            Message::Fetch(refs) => {
                for r in refs {
                    if let Some(b) = self.store.get(r) {
                        effects.push(Effect::Send {
                            to: vec![from],
                            message: Message::Block(Arc::new(b.to_bytes())),
                        });
                    }
                }
            }
        }
        effects
    }

    fn on_block_bytes(&mut self, from: ValidatorId, bytes: &[u8], now: SimTime, effects: &mut Vec<Effect>) {
        let Ok(block) = Block::from_bytes(bytes) else {
            self.metrics.undecodable += 1;
            return;
        };
        if self.store.contains(&block.reference()) || self.store.is_pending(&block.reference()) {
            return;
        }
        let min_parents = self.min_parents();
        match validate_block(&block, &self.store, &self.committee, self.signer.as_ref(), min_parents) {
            Validation::Accepted => {
                let stored = self.store.insert_and_resolve(block);
                self.after_insert(&stored, now, effects);
            }
            Validation::Suspended(missing) => match self.store.suspend(block, missing) {
                Ok(fetch) if !fetch.is_empty() => {
                    self.metrics.fetches_sent += 1;
                    effects.push(Effect::Send { to: vec![from], message: Message::Fetch(fetch) });
                }
                Ok(_) => {}
                Err(_) => self.metrics.rejected += 1,
            },
            Validation::Rejected(_) => self.metrics.rejected += 1,
        }
    }

    fn after_insert(&mut self, stored: &[BlockRef], now: SimTime, effects: &mut Vec<Effect>) {
        if stored.is_empty() {
            return;
        }
        let quorum = self.committee.quorum_threshold();
        for r in stored {
            if !self.metrics.quorum_at.contains_key(&r.round) && self.store.authors_at_round(r.round) >= quorum {
                self.metrics.quorum_at.insert(r.round, now);
            }
        }
        self.try_commit(now);
        self.try_advance(now, effects);
    }

    fn try_commit(&mut self, now: SimTime) {
        let committer = Committer::new(&self.store, &self.committee);
        let delta = self.linearizer.extend_commit_sequence(&committer);
        for ordered in delta.blocks {
            if let Some(block) = self.store.get(&ordered.block_ref) {
                for tx in block.payload() {
                    if tx.client == self.id.0 {
                        self.metrics.latencies.push(LatencySample {
                            client: tx.client,
                            seq: tx.seq,
                            created_at: tx.created_at,
                            committed_at: now,
                        });
                    }
                }
            }
            self.log.push(CommitRecord {
                observer: self.id,
                leader_slot: ordered.leader_slot,
                block_ref: ordered.block_ref,
                emit_index: ordered.emit_index,
                sim_time_ms: now as f64 / 1000.0,
            });
        }
    }

    fn try_advance(&mut self, now: SimTime, effects: &mut Vec<Effect>) {
        if self.halted {
            return;
        }
        while let Some((waited, forced)) = self.readiness(now) {
            if let Behavior::Crash { at_round } = self.config.behavior {
                if self.round >= at_round {
                    self.crashed_at = Some(now);
                    return;
                }
            }
            self.metrics.rounds.push(RoundRecord {
                round: self.round,
                entered_at: self.round_entered,
                left_at: now,
                waited_full_timeout: waited,
                forced_by_blames: forced,
            });
            self.propose(now, effects);
            self.round += 1;
            self.round_entered = now;
            effects.push(Effect::Timer { at: self.deadline() });
        }
    }

    fn propose(&mut self, now: SimTime, effects: &mut Vec<Effect>) {
        let copies = match self.config.behavior {
            Behavior::Equivocate { copies } => copies.max(1),
            _ => 1,
        };
        let peers: Vec<ValidatorId> = self.committee.validators().filter(|v| *v != self.id).collect();
        let chunk = peers.len().div_ceil(copies).max(1);
        let mut variants = Vec::with_capacity(copies);
        let base = self.create_block(None);
        variants.push(base.clone());
        for variant in 1..copies {
            let marker = Transaction {
                client: MARKER_CLIENT,
                seq: variant as u64,
                created_at: now,
                payload: Vec::new(),
            };
            let mut payload = base.payload().to_vec();
            payload.push(marker);
            variants.push(Block::new(
                self.id,
                base.round(),
                payload,
                base.parents().to_vec(),
                self.signer.as_ref(),
            ));
        }
        for (i, block) in variants.into_iter().enumerate() {
            let r = block.reference();
            let to = if copies == 1 {
                peers.clone()
            } else {
                (0..chunk).map(|j| peers[(i * chunk + j) % peers.len()]).collect()
            };
            if i == 0 {
                self.own.insert(r.round, r);
                self.metrics.proposals.push((r, now));
                let bytes = Arc::new(block.to_bytes());
                let stored = self.store.insert_and_resolve(block);
                effects.push(Effect::Send { to, message: Message::Block(bytes) });
                // Recorded before the commit check so quorum times are exact.
                let quorum = self.committee.quorum_threshold();
                if !self.metrics.quorum_at.contains_key(&r.round) && self.store.authors_at_round(r.round) >= quorum {
                    self.metrics.quorum_at.insert(r.round, now);
                }
                debug_assert_eq!(stored, vec![r]);
            } else if !to.is_empty() {
                effects.push(Effect::Send { to, message: Message::Block(Arc::new(block.to_bytes())) });
            }
        }
        self.try_commit(now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::MacSigner;

    fn committee() -> Committee {
        Committee::new(6).unwrap()
    }

    fn validator(id: u32, config: ValidatorConfig) -> Validator {
        Validator::new(ValidatorId(id), committee(), config, Arc::new(MacSigner::new(0)))
    }

    fn tx(seq: u64) -> Transaction {
        Transaction { client: 0, seq, created_at: 0, payload: vec![0; 4] }
    }

    fn block_bytes(effects: &[Effect]) -> Vec<Arc<Vec<u8>>> {
        effects
            .iter()
            .filter_map(|e| match e {
                Effect::Send { message: Message::Block(b), .. } => Some(b.clone()),
                _ => None,
            })
            .collect()
    }

    /// Round-1 block of `author` over all genesis blocks.
    fn round1(author: u32) -> Block {
        let c = committee();
        let mut parents: Vec<_> = c.validators().map(|v| Block::genesis(v).reference()).collect();
        parents.sort_by_key(|p| p.author.0 != author);
        Block::new(ValidatorId(author), 1, vec![], parents, &MacSigner::new(0))
    }

    fn deliver(v: &mut Validator, b: &Block, now: SimTime) -> Vec<Effect> {
        v.on_message(b.author(), &Message::Block(Arc::new(b.to_bytes())), now)
    }

    #[test]
    fn mempool_is_fifo() {
        let mut m = Mempool::new(10);
        for i in 1..=3 {
            m.push(tx(i));
        }
        let got: Vec<_> = m.drain(2).iter().map(|t| t.seq).collect();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(m.len(), 1);
        assert!(!Mempool::new(0).push(tx(1)));
    }

    #[test]
    fn genesis_round_advances_immediately() {
        let mut v = validator(0, ValidatorConfig::default());
        let effects = v.start(0);
        assert_eq!(v.round(), 1);
        let blocks = block_bytes(&effects);
        assert_eq!(blocks.len(), 1);
        let b = Block::from_bytes(&blocks[0]).unwrap();
        assert_eq!(b.round(), 1);
        assert_eq!(b.parents()[0].author, ValidatorId(0));
        assert_eq!(b.parents().len(), 6);
    }

    #[test]
    fn payload_drains_mempool_in_order() {
        let config = ValidatorConfig { max_block_txs: 2, ..ValidatorConfig::default() };
        let mut v = validator(0, config);
        for i in 1..=3 {
            v.on_transaction(tx(i));
        }
        let effects = v.start(0);
        let b = Block::from_bytes(&block_bytes(&effects)[0]).unwrap();
        assert_eq!(b.payload().iter().map(|t| t.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(v.mempool().len(), 1);
    }

    #[test]
    fn waits_for_leader_until_timeout() {
        // Round-1 leader is V1; V0 holds blocks from everyone else.
        let config = ValidatorConfig { optimization: false, ..ValidatorConfig::default() };
        let mut v = validator(0, config);
        v.start(0);
        for a in [2, 3, 4, 5] {
            deliver(&mut v, &round1(a), 10);
        }
        assert_eq!(v.round(), 1);
        assert!(!v.ready_to_propose(199_999));
        assert!(v.ready_to_propose(200_000));
        v.on_timer(200_000);
        assert_eq!(v.round(), 2);
        assert!(v.metrics().rounds[1].waited_full_timeout);
    }

    #[test]
    fn last_missing_leader_triggers_advance() {
        let mut v = validator(0, ValidatorConfig::default());
        v.start(0);
        for a in [2, 3, 4, 5] {
            deliver(&mut v, &round1(a), 10);
        }
        assert_eq!(v.round(), 1);
        let effects = deliver(&mut v, &round1(1), 20);
        assert_eq!(v.round(), 2);
        assert_eq!(block_bytes(&effects).len(), 1);
    }

    #[test]
    fn blames_release_the_wait() {
        let mut v = validator(0, ValidatorConfig::default());
        v.start(0);
        let r1: Vec<_> = [2, 3, 4, 5].iter().map(|&a| round1(a)).collect();
        for b in &r1 {
            deliver(&mut v, b, 10);
        }
        let mut prev: Vec<_> = r1.iter().map(|b| b.reference()).collect();
        prev.push(v.own[&1]);
        let s = MacSigner::new(0);
        let next = |author: u32| {
            let mut parents = prev.clone();
            parents.sort_by_key(|p| p.author.0 != author);
            Block::new(ValidatorId(author), 2, vec![], parents, &s)
        };
        deliver(&mut v, &next(2), 20);
        deliver(&mut v, &next(3), 20);
        assert!(!v.force_due_to_leader_blames());
        assert_eq!(v.round(), 1);
        deliver(&mut v, &next(4), 30);
        assert_eq!(v.round(), 2);
        assert!(v.metrics().rounds[1].forced_by_blames);
    }

    #[test]
    fn only_absent_leaders_count_as_missing() {
        let c = Committee::new(6).unwrap().with_leaders_per_round(2).unwrap();
        let mut v = Validator::new(ValidatorId(0), c, ValidatorConfig::default(), Arc::new(MacSigner::new(0)));
        v.start(0);
        // Round-1 leaders are V1 and V2; V2 is present, V1 is not.
        let r1: Vec<_> = [2, 3, 4, 5].iter().map(|&a| round1(a)).collect();
        for b in &r1 {
            deliver(&mut v, b, 10);
        }
        assert_eq!(v.round(), 1);
        assert_eq!(v.missing_leaders(), vec![ValidatorId(1)]);
    }

    #[test]
    fn duplicate_delivery_is_ignored() {
        let mut v = validator(0, ValidatorConfig::default());
        v.start(0);
        let b = round1(2);
        deliver(&mut v, &b, 10);
        let len = v.store().len();
        assert!(deliver(&mut v, &b, 11).is_empty());
        assert_eq!(v.store().len(), len);
    }

    #[test]
    fn unknown_parent_triggers_fetch_then_resolves() {
        let mut v = validator(0, ValidatorConfig::default());
        v.start(0);
        let r1: Vec<_> = (1..6).map(round1).collect();
        let mut parents: Vec<_> = r1.iter().map(|b| b.reference()).collect();
        parents.sort_by_key(|p| p.author.0 != 3);
        let child = Block::new(ValidatorId(3), 2, vec![], parents, &MacSigner::new(0));
        let effects = deliver(&mut v, &child, 5);
        let fetch = effects.iter().find_map(|e| match e {
            Effect::Send { message: Message::Fetch(refs), .. } => Some(refs.clone()),
            _ => None,
        });
        assert_eq!(fetch.map(|f| f.len()), Some(5));
        for b in &r1[..4] {
            deliver(&mut v, b, 6);
        }
        assert!(!v.store().contains(&child.reference()));
        deliver(&mut v, &r1[4], 7);
        assert!(v.store().contains(&child.reference()));
    }

    #[test]
    fn crash_at_zero_never_proposes() {
        let config = ValidatorConfig { behavior: Behavior::Crash { at_round: 0 }, ..ValidatorConfig::default() };
        let mut v = validator(0, config);
        assert!(v.start(0).is_empty());
        assert!(v.is_crashed());
    }

    #[test]
    fn equivocation_splits_peers() {
        let config = ValidatorConfig { behavior: Behavior::Equivocate { copies: 2 }, ..ValidatorConfig::default() };
        let mut v = validator(0, config);
        let effects = v.start(0);
        let sends: Vec<_> = effects
            .iter()
            .filter_map(|e| match e {
                Effect::Send { to, message: Message::Block(b) } => Some((to.clone(), Block::from_bytes(b).unwrap())),
                _ => None,
            })
            .collect();
        assert_eq!(sends.len(), 2);
        assert_ne!(sends[0].1.digest(), sends[1].1.digest());
        assert_eq!(sends[0].0.len(), 3);
        assert_eq!(sends[1].0.len(), 3);
    }
}
