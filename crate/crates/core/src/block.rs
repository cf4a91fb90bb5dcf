// SPDX-License-Identifier: Apache-2.0

//! DAG vertices and their canonical byte encoding.
//!
//! Encoding: fields in declaration order, integers fixed-width little-endian,
//! lists and byte strings prefixed with a `u32` length. The digest covers
//! every field except the signature.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::committee::{Round, ValidatorId};
use crate::crypto::{Signature, Signer};

/// Simulated time in microseconds.
pub type SimTime = u64;

pub const DIGEST_LEN: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    /// Truncated SHA-256.
    pub fn of(bytes: &[u8]) -> Self {
        let full = Sha256::digest(bytes);
        let mut out = [0u8; DIGEST_LEN];
        out.copy_from_slice(&full[..DIGEST_LEN]);
        Self(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; DIGEST_LEN] = bytes.try_into().ok()?;
        Some(Self(arr))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..8])
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad digest"))
    }
}

/// Identity of a block: `(author, round, digest)`.
///
/// Ordered by round, then author, then digest, which is also the order in
/// which sub-DAGs are linearized.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockRef {
    pub author: ValidatorId,
    pub round: Round,
    pub digest: Digest,
}

impl Ord for BlockRef {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.round, self.author, self.digest).cmp(&(other.round, other.author, other.digest))
    }
}

impl PartialOrd for BlockRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@r{}#{:?}", self.author, self.round, self.digest)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Transaction {
    pub client: u32,
    pub seq: u64,
    pub created_at: SimTime,
    pub payload: Vec<u8>,
}

impl Transaction {
    pub fn id(&self) -> (u32, u64) {
        (self.client, self.seq)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    reference: BlockRef,
    payload: Vec<Transaction>,
    parents: Vec<BlockRef>,
    signature: Signature,
}

impl Block {
    pub fn new(
        author: ValidatorId,
        round: Round,
        payload: Vec<Transaction>,
        parents: Vec<BlockRef>,
        signer: &dyn Signer,
    ) -> Self {
        let digest = Digest::of(&encode_contents(author, round, &payload, &parents));
        let signature = signer.sign(author, &digest);
        Self {
            reference: BlockRef { author, round, digest },
            payload,
            parents,
            signature,
        }
    }

    /// Assembles a block with an explicit signature (used by decoding and by
    /// tests that forge authenticators).
    pub fn from_parts(
        author: ValidatorId,
        round: Round,
        payload: Vec<Transaction>,
        parents: Vec<BlockRef>,
        signature: Signature,
    ) -> Self {
        let digest = Digest::of(&encode_contents(author, round, &payload, &parents));
        Self {
            reference: BlockRef { author, round, digest },
            payload,
            parents,
            signature,
        }
    }

    /// The well-known round-0 block of `author`; identical on every validator.
    pub fn genesis(author: ValidatorId) -> Self {
        Self::from_parts(author, 0, Vec::new(), Vec::new(), Signature::default())
    }

    pub fn reference(&self) -> BlockRef {
        self.reference
    }

    pub fn author(&self) -> ValidatorId {
        self.reference.author
    }

    pub fn round(&self) -> Round {
        self.reference.round
    }

    pub fn digest(&self) -> Digest {
        self.reference.digest
    }

    pub fn parents(&self) -> &[BlockRef] {
        &self.parents
    }

    pub fn payload(&self) -> &[Transaction] {
        &self.payload
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn is_genesis(&self) -> bool {
        self.round() == 0
    }

    /// True iff `leader` (full triplet) is one of this block's parents.
    pub fn supports(&self, leader: &BlockRef) -> bool {
        self.parents.contains(leader)
    }

    /// True iff no parent was authored by `author` at `round`.
    pub fn omits_author(&self, author: ValidatorId, round: Round) -> bool {
        self.parents
            .iter()
            .all(|p| p.author != author || p.round != round)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = encode_contents(self.author(), self.round(), &self.payload, &self.parents);
        put_bytes(&mut out, &self.signature.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let author = ValidatorId(r.u32()?);
        let round = r.u64()?;
        let tx_count = r.u32()? as usize;
        let mut payload = Vec::with_capacity(tx_count.min(1 << 16));
        for _ in 0..tx_count {
            payload.push(Transaction {
                client: r.u32()?,
                seq: r.u64()?,
                created_at: r.u64()?,
                payload: r.bytes()?.to_vec(),
            });
        }
        let parent_count = r.u32()? as usize;
        let mut parents = Vec::with_capacity(parent_count.min(1 << 16));
        for _ in 0..parent_count {
            parents.push(r.block_ref()?);
        }
        let signature = Signature(r.bytes()?.to_vec());
        if r.pos != bytes.len() {
            return Err(DecodeError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self::from_parts(author, round, payload, parents, signature))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after block")]
    TrailingBytes(usize),
}

fn encode_contents(
    author: ValidatorId,
    round: Round,
    payload: &[Transaction],
    parents: &[BlockRef],
) -> Vec<u8> {
    let tx_bytes: usize = payload.iter().map(|t| 24 + t.payload.len()).sum();
    let mut out = Vec::with_capacity(24 + tx_bytes + parents.len() * (12 + DIGEST_LEN));
    out.extend_from_slice(&author.0.to_le_bytes());
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    for tx in payload {
        out.extend_from_slice(&tx.client.to_le_bytes());
        out.extend_from_slice(&tx.seq.to_le_bytes());
        out.extend_from_slice(&tx.created_at.to_le_bytes());
        put_bytes(&mut out, &tx.payload);
    }
    out.extend_from_slice(&(parents.len() as u32).to_le_bytes());
    for p in parents {
        out.extend_from_slice(&p.author.0.to_le_bytes());
        out.extend_from_slice(&p.round.to_le_bytes());
        out.extend_from_slice(&p.digest.0);
    }
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .ok_or(DecodeError::Truncated(self.pos))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn block_ref(&mut self) -> Result<BlockRef, DecodeError> {
        let author = ValidatorId(self.u32()?);
        let round = self.u64()?;
        let digest = Digest(self.take(DIGEST_LEN)?.try_into().unwrap());
        Ok(BlockRef { author, round, digest })
    }
}
