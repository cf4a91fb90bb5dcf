// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event network simulator.
//!
//! Events run in `(time, sequence number)` order on one thread. Randomness
//! comes from one root seed split into independent ChaCha streams, one per
//! concern, so changing one feature does not shift the others' draws.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{SimTime, Transaction};
use crate::committee::{Committee, CommitteeError, Round, ValidatorId};
use crate::committer::Committer;
use crate::crypto::MacSigner;
use crate::report::RunReport;
use crate::validator::{Behavior, Effect, Message, Validator, ValidatorConfig};

const STREAM_DELAY: u64 = 1;
const STREAM_LOAD: u64 = 2;

pub fn ms_to_us(ms: f64) -> SimTime {
    (ms * 1000.0).round() as SimTime
}

pub fn us_to_ms(us: SimTime) -> f64 {
    us as f64 / 1000.0
}

fn default_leaders() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_delta() -> f64 {
    100.0
}

fn default_tx_size() -> usize {
    512
}

fn default_block_txs() -> usize {
    10_000
}

fn default_max_events() -> u64 {
    50_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitteeSection {
    pub size: usize,
    #[serde(default = "default_leaders")]
    pub leaders_per_round: usize,
    #[serde(default = "default_true")]
    pub pipelined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    #[serde(default = "default_delta")]
    pub delta_ms: f64,
    #[serde(default)]
    pub gst_ms: f64,
    pub duration_ms: f64,
}

/// One-way delay distribution, in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    Fixed { delay_ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
    /// `matrix_ms[from][to]`, plus optional uniform jitter.
    Matrix {
        matrix_ms: Vec<Vec<f64>>,
        #[serde(default)]
        jitter_ms: f64,
    },
}

impl DelayModel {
    pub fn sample(&self, from: ValidatorId, to: ValidatorId, rng: &mut impl Rng) -> SimTime {
        match self {
            DelayModel::Fixed { delay_ms } => ms_to_us(*delay_ms),
            DelayModel::Uniform { lo_ms, hi_ms } => {
                let (lo, hi) = (ms_to_us(*lo_ms), ms_to_us(*hi_ms));
                rng.gen_range(lo..=hi)
            }
            DelayModel::Matrix { matrix_ms, jitter_ms } => {
                let base = ms_to_us(matrix_ms[from.index()][to.index()]);
                let jitter = ms_to_us(*jitter_ms);
                base + if jitter > 0 { rng.gen_range(0..=jitter) } else { 0 }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub delay: DelayModel,
    /// Extra adversarial delay drawn uniformly from `[0, cap]` for messages
    /// sent before GST.
    #[serde(default)]
    pub pre_gst_cap_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    #[serde(default)]
    pub rate_tps: f64,
    #[serde(default = "default_tx_size")]
    pub tx_size: usize,
}

impl Default for LoadSection {
    fn default() -> Self {
        Self { rate_tps: 0.0, tx_size: default_tx_size() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(default = "default_true")]
    pub optimization: bool,
    /// Lowers the round-advance parent count to `ceil(2n/3)`. Not safe.
    #[serde(default)]
    pub unsafe_parent_threshold: bool,
    #[serde(default)]
    pub max_parents: Option<usize>,
    #[serde(default = "default_block_txs")]
    pub max_block_txs: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            optimization: true,
            unsafe_parent_threshold: false,
            max_parents: None,
            max_block_txs: default_block_txs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultKind {
    Crash { at_round: Round },
    Equivocate { copies: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub validator: u32,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatchdogSection {
    #[serde(default = "default_max_events")]
    pub max_events: u64,
}

impl Default for WatchdogSection {
    fn default() -> Self {
        Self { max_events: default_max_events() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub committee: CommitteeSection,
    pub timing: TimingSection,
    pub network: NetworkSection,
    #[serde(default)]
    pub load: LoadSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub watchdog: WatchdogSection,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Committee(#[from] CommitteeError),
    #[error("{faulty} faulty validators exceed f = {f}")]
    TooManyFaults { faulty: usize, f: usize },
    #[error("fault assigned to unknown or repeated validator {0}")]
    BadFaultTarget(u32),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Plain committee of the given size with the defaults everywhere else.
    pub fn simple(size: usize, delay: DelayModel, duration_ms: f64) -> Self {
        Self {
            seed: 0,
            committee: CommitteeSection { size, leaders_per_round: 1, pipelined: true },
            timing: TimingSection { delta_ms: default_delta(), gst_ms: 0.0, duration_ms },
            network: NetworkSection { delay, pre_gst_cap_ms: 0.0 },
            load: LoadSection::default(),
            protocol: ProtocolSection::default(),
            faults: Vec::new(),
            watchdog: WatchdogSection::default(),
        }
    }

    pub fn committee(&self) -> Result<Committee, CommitteeError> {
        Ok(Committee::new(self.committee.size)?
            .with_leaders_per_round(self.committee.leaders_per_round)?
            .with_pipelining(self.committee.pipelined))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let committee = self.committee()?;
        let n = committee.size();
        let invalid = |what: &str| Err(ScenarioError::Invalid(what.to_string()));
        let f = committee.max_faults();
        if self.faults.len() > f {
            return Err(ScenarioError::TooManyFaults { faulty: self.faults.len(), f });
        }
        let mut seen = Vec::new();
        for fault in &self.faults {
            if fault.validator as usize >= n || seen.contains(&fault.validator) {
                return Err(ScenarioError::BadFaultTarget(fault.validator));
            }
            seen.push(fault.validator);
            if let FaultKind::Equivocate { copies } = fault.kind {
                if copies < 2 {
                    return invalid("equivocate needs at least 2 copies");
                }
            }
        }
        let t = &self.timing;
        if !(t.delta_ms > 0.0) || !(t.duration_ms > 0.0) || !(t.gst_ms >= 0.0) {
            return invalid("timing values must be positive");
        }
        if !(self.network.pre_gst_cap_ms >= 0.0) {
            return invalid("pre_gst_cap_ms must be non-negative");
        }
        match &self.network.delay {
            DelayModel::Fixed { delay_ms } if !(*delay_ms >= 0.0) => return invalid("negative delay"),
            DelayModel::Uniform { lo_ms, hi_ms } if !(*lo_ms >= 0.0 && lo_ms <= hi_ms) => {
                return invalid("uniform delay needs 0 <= lo_ms <= hi_ms")
            }
            DelayModel::Matrix { matrix_ms, jitter_ms } => {
                if matrix_ms.len() != n || matrix_ms.iter().any(|row| row.len() != n) {
                    return invalid("delay matrix must be n x n");
                }
                if matrix_ms.iter().flatten().any(|d| !(*d >= 0.0)) || !(*jitter_ms >= 0.0) {
                    return invalid("negative delay");
                }
            }
            _ => {}
        }
        if !(self.load.rate_tps >= 0.0) {
            return invalid("negative load rate");
        }
        if self.protocol.max_block_txs == 0 {
            return invalid("max_block_txs must be positive");
        }
        Ok(())
    }

    pub fn behavior_of(&self, v: ValidatorId) -> Behavior {
        match self.faults.iter().find(|f| f.validator == v.0).map(|f| f.kind) {
            None => Behavior::Honest,
            Some(FaultKind::Crash { at_round }) => Behavior::Crash { at_round },
            Some(FaultKind::Equivocate { copies }) => Behavior::Equivocate { copies },
        }
    }

    pub fn is_honest(&self, v: ValidatorId) -> bool {
        self.behavior_of(v) == Behavior::Honest
    }

    pub fn delta(&self) -> SimTime {
        ms_to_us(self.timing.delta_ms)
    }

    pub fn gst(&self) -> SimTime {
        ms_to_us(self.timing.gst_ms)
    }

    pub fn duration(&self) -> SimTime {
        ms_to_us(self.timing.duration_ms)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Evenly spaced transactions with seeded jitter inside each gap, assigned
/// to validators round-robin. The target's index doubles as the client id.
pub fn generate_load(scenario: &Scenario) -> Vec<(Transaction, ValidatorId, SimTime)> {
    let rate = scenario.load.rate_tps;
    if rate <= 0.0 {
        return Vec::new();
    }
    let mut rng = stream(scenario.seed, STREAM_LOAD);
    let n = scenario.committee.size;
    let count = (rate * scenario.timing.duration_ms / 1000.0).floor() as u64;
    let spacing = 1_000_000.0 / rate;
    (0..count)
        .map(|i| {
            let jitter: f64 = rng.gen_range(0.0..spacing);
            let at = (i as f64 * spacing + jitter) as SimTime;
            let target = ValidatorId((i % n as u64) as u32);
            let mut payload = vec![0u8; scenario.load.tx_size];
            for (j, byte) in payload.iter_mut().take(8).enumerate() {
                *byte = (i >> (8 * j)) as u8;
            }
            let tx = Transaction { client: target.0, seq: i, created_at: at, payload };
            (tx, target, at)
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("watchdog: event budget of {0} exceeded before quiescence")]
    Watchdog(u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub processed: u64,
    pub deliveries: u64,
    pub dropped: u64,
    pub timers: u64,
    pub transactions: u64,
}

#[derive(Debug)]
enum EventKind {
    Start,
    Deliver { from: ValidatorId, message: Message },
    Timer,
    Tx(Transaction),
}

#[derive(Debug)]
struct Event {
    time: SimTime,
    seq: u64,
    to: ValidatorId,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Delivery times of a point-to-point link under the scenario's model.
pub struct Network {
    delay: DelayModel,
    delta: SimTime,
    gst: SimTime,
    pre_gst_cap: SimTime,
    rng: ChaCha8Rng,
}

impl Network {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            delay: scenario.network.delay.clone(),
            delta: scenario.delta(),
            gst: scenario.gst(),
            pre_gst_cap: ms_to_us(scenario.network.pre_gst_cap_ms),
            rng: stream(scenario.seed, STREAM_DELAY),
        }
    }

    /// After GST the delay is clamped to `delta`; before GST an adversarial
    /// extra up to the cap is added, but arrival never passes `GST + delta`.
    pub fn schedule_delivery(&mut self, from: ValidatorId, to: ValidatorId, send: SimTime) -> SimTime {
        let sampled = self.delay.sample(from, to, &mut self.rng);
        if send >= self.gst {
            return send + sampled.min(self.delta);
        }
        let extra = if self.pre_gst_cap > 0 { self.rng.gen_range(0..=self.pre_gst_cap) } else { 0 };
        (send + sampled + extra).min(self.gst + self.delta)
    }
}

pub struct Simulation {
    scenario: Scenario,
    committee: Committee,
    validators: Vec<Validator>,
    network: Network,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    now: SimTime,
    counts: EventCounts,
    max_delivery_delay: SimTime,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let committee = scenario.committee()?;
        let signer = Arc::new(MacSigner::new(scenario.seed));
        let validators = committee
            .validators()
            .map(|v| {
                let config = ValidatorConfig {
                    delta: scenario.delta(),
                    optimization: scenario.protocol.optimization,
                    unsafe_parent_threshold: scenario.protocol.unsafe_parent_threshold,
                    max_parents: scenario.protocol.max_parents,
                    max_block_txs: scenario.protocol.max_block_txs,
                    mempool_capacity: 1 << 24,
                    behavior: scenario.behavior_of(v),
                };
                Validator::new(v, committee, config, signer.clone())
            })
            .collect();
        let network = Network::new(&scenario);
        Ok(Self {
            scenario,
            committee,
            validators,
            network,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
            counts: EventCounts::default(),
            max_delivery_delay: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn validators(&self) -> &[Validator] {
        &self.validators
    }

    pub fn counts(&self) -> EventCounts {
        self.counts
    }

    /// Largest delay given to a message sent at or after GST.
    pub fn max_post_gst_delay(&self) -> SimTime {
        self.max_delivery_delay
    }

    fn push(&mut self, time: SimTime, to: ValidatorId, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { time, seq, to, kind }));
    }

    fn apply(&mut self, from: ValidatorId, effects: Vec<Effect>) {
        for effect in effects {
            match effect {
                Effect::Timer { at } => {
                    if at < self.scenario.duration() {
                        self.push(at, from, EventKind::Timer);
                    }
                }
                Effect::Send { to, message } => {
                    for peer in to {
                        let arrival = self.network.schedule_delivery(from, peer, self.now);
                        if self.now >= self.network.gst {
                            self.max_delivery_delay = self.max_delivery_delay.max(arrival - self.now);
                        }
                        self.push(arrival, peer, EventKind::Deliver { from, message: message.clone() });
                    }
                }
            }
        }
    }

    /// Runs until the duration has elapsed and all in-flight messages have
    /// been delivered. Validators stop proposing at the end of the duration.
    pub fn run(&mut self) -> Result<(), SimError> {
        let end = self.scenario.duration();
        let committee = self.committee;
        for v in committee.validators() {
            self.push(0, v, EventKind::Start);
        }
        for (tx, target, at) in generate_load(&self.scenario) {
            self.push(at, target, EventKind::Tx(tx));
        }
        let mut halted = false;
        while let Some(Reverse(event)) = self.queue.pop() {
            debug_assert!(event.time >= self.now);
            self.now = event.time;
            if !halted && self.now >= end {
                for v in &mut self.validators {
                    v.halt_proposals();
                }
                halted = true;
            }
            self.counts.processed += 1;
            if self.counts.processed > self.scenario.watchdog.max_events {
                return Err(SimError::Watchdog(self.scenario.watchdog.max_events));
            }
            let to = event.to;
            let target = &mut self.validators[to.index()];
            let effects = match event.kind {
                EventKind::Start => target.start(self.now),
                EventKind::Timer => {
                    self.counts.timers += 1;
                    target.on_timer(self.now)
                }
                EventKind::Tx(tx) => {
                    self.counts.transactions += 1;
                    target.on_transaction(tx);
                    Vec::new()
                }
                EventKind::Deliver { from, message } => {
                    if target.is_crashed() {
                        self.counts.dropped += 1;
                        Vec::new()
                    } else {
                        self.counts.deliveries += 1;
                        target.on_message(from, &message, self.now)
                    }
                }
            };
            self.apply(to, effects);
        }
        Ok(())
    }

    /// Slots after the decided prefix of `v`, up to its highest round.
    pub fn undecided_tail(&self, v: ValidatorId) -> usize {
        let validator = &self.validators[v.index()];
        let store = validator.store();
        let last = validator.linearizer().last_decided();
        let from = last.map_or(0, |s| s.round.saturating_sub(1));
        Committer::new(store, &self.committee)
            .try_decide(from, store.highest_round())
            .into_iter()
            .filter(|s| last.is_none_or(|l| s.slot > l))
            .count()
    }

    pub fn report(&self) -> RunReport {
        RunReport::collect(self)
    }
}

/// Validates, runs to quiescence and collects the report.
pub fn run(scenario: &Scenario) -> Result<RunReport, SimError> {
    let mut sim = Simulation::new(scenario.clone())?;
    sim.run()?;
    Ok(sim.report())
}
