// SPDX-License-Identifier: Apache-2.0

//! Two-round uncertified-DAG Byzantine consensus for `n = 5f + 1`
//! validators, and a deterministic discrete-event simulator to run it.

pub mod block;
pub mod committee;
pub mod committer;
pub mod crypto;
pub mod dag;
pub mod harness;
pub mod linearizer;
pub mod report;
pub mod simnet;
pub mod validator;

pub use block::{Block, BlockRef, Digest, SimTime, Transaction};
pub use committee::{Committee, CommitteeError, LeaderSchedule, Round, StakeAggregator, ValidatorId};
pub use committer::{Committer, Decider, Decision, LeaderSlot, LeaderStatus, WAVE_LENGTH};
pub use crypto::{MacSigner, Signature, Signer};
pub use dag::{validate_block, DagStore, RejectReason, Validation};
pub use linearizer::{CommitDelta, CommitRecord, Linearizer, OrderedBlock};
pub use report::{percentile, ReportRecord, RunReport, SummaryStats, ValidatorReport};
pub use simnet::{generate_load, run, DelayModel, Fault, FaultKind, Scenario, ScenarioError, SimError, Simulation};
pub use validator::{Behavior, Effect, Message, Validator, ValidatorConfig, MARKER_CLIENT};
