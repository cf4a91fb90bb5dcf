// SPDX-License-Identifier: Apache-2.0

//! Pluggable block authentication with a test-grade keyed-MAC default.

use sha2::{Digest as _, Sha256};

use crate::block::Digest;
use crate::committee::ValidatorId;

#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct Signature(pub Vec<u8>);

pub trait Signer: Send + Sync {
    fn sign(&self, author: ValidatorId, digest: &Digest) -> Signature;
    fn verify(&self, author: ValidatorId, digest: &Digest, signature: &Signature) -> bool;
}

/// Keyed MAC over the block digest. Per-validator keys derive from a shared
/// committee secret, so this authenticates only against parties that do not
/// know the secret. Not for production use.
#[derive(Clone, Debug)]
pub struct MacSigner {
    secret: [u8; 32],
}

impl MacSigner {
    pub fn new(committee_secret: u64) -> Self {
        let mut secret = [0u8; 32];
        secret.copy_from_slice(&Sha256::digest(committee_secret.to_le_bytes()));
        Self { secret }
    }

    fn tag(&self, author: ValidatorId, digest: &Digest) -> [u8; 16] {
        let key = Sha256::new()
            .chain_update(self.secret)
            .chain_update(author.0.to_le_bytes())
            .finalize();
        let mac = Sha256::new()
            .chain_update(key)
            .chain_update(digest.0)
            .finalize();
        mac[..16].try_into().unwrap()
    }
}

impl Signer for MacSigner {
    fn sign(&self, author: ValidatorId, digest: &Digest) -> Signature {
        Signature(self.tag(author, digest).to_vec())
    }

    fn verify(&self, author: ValidatorId, digest: &Digest, signature: &Signature) -> bool {
        signature.0 == self.tag(author, digest)
    }
}
