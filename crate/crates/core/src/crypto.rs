//! Simulated `(k, n)`-threshold signatures.
//!
//! Shares and combined signatures are structural tokens. Their unforgeability
//! is a property of the simulation model: the network authenticates senders,
//! correct processes only sign under their own id, and [`CombinedSig`] can only
//! be built by [`combine`]. The simulator additionally keeps a ledger of every
//! share produced by a correct process so that forged combinations can be
//! detected after the fact.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::ProcessId;

pub type Digest32 = [u8; 32];

/// Opaque byte string a share or combined signature is computed over.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SchemeMessage(Arc<[u8]>);

impl SchemeMessage {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        SchemeMessage(Arc::from(bytes.into()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn digest(&self) -> Digest32 {
        sha256(&[b"sba-lab/msg", &self.0])
    }
}

impl fmt::Debug for SchemeMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SchemeMessage({})", hex::encode(&self.0))
    }
}

impl Serialize for SchemeMessage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

/// Partial signature `ShareSign_i^k(m)`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Share {
    signer: ProcessId,
    threshold: usize,
    message: SchemeMessage,
    #[serde(serialize_with = "ser_hex")]
    mac: [u8; 16],
}

impl Share {
    pub fn signer(&self) -> ProcessId {
        self.signer
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn message(&self) -> &SchemeMessage {
        &self.message
    }

    pub fn mac(&self) -> &[u8; 16] {
        &self.mac
    }
}

impl fmt::Debug for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Share")
            .field("signer", &self.signer)
            .field("threshold", &self.threshold)
            .field("message", &self.message)
            .finish()
    }
}

/// Combined threshold signature `Combine^k(S)`. Counts as one word.
#[derive(Clone, PartialEq, Eq, Hash, Serialize)]
pub struct CombinedSig {
    threshold: usize,
    #[serde(serialize_with = "ser_hex")]
    message_digest: Digest32,
    #[serde(serialize_with = "ser_hex")]
    signer_set_digest: Digest32,
}

impl CombinedSig {
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn message_digest(&self) -> &Digest32 {
        &self.message_digest
    }

    pub fn signer_set_digest(&self) -> &Digest32 {
        &self.signer_set_digest
    }
}

impl fmt::Debug for CombinedSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "CombinedSig(k={}, m={}..)",
            self.threshold,
            hex::encode(&self.message_digest[..4])
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CombineError {
    #[error("signer {0} contributed more than one share")]
    DuplicateSigner(ProcessId),
    #[error("shares disagree on message or threshold")]
    MixedMessage,
    #[error("expected exactly {expected} shares, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("share from signer {0} does not verify")]
    InvalidShare(ProcessId),
}

pub fn share_sign(signer: ProcessId, k: usize, m: &SchemeMessage) -> Share {
    Share {
        signer,
        threshold: k,
        message: m.clone(),
        mac: share_mac(signer, k, m),
    }
}

pub fn share_verify(s: &Share) -> bool {
    s.signer.get() >= 1 && s.threshold >= 1 && s.mac == share_mac(s.signer, s.threshold, &s.message)
}

/// Checks `s` is a valid share by `signer` over `m` at threshold `k`.
pub fn share_verify_for(s: &Share, signer: ProcessId, k: usize, m: &SchemeMessage) -> bool {
    s.signer == signer && s.threshold == k && s.message == *m && share_verify(s)
}

pub fn combine<'a, I>(k: usize, shares: I) -> Result<CombinedSig, CombineError>
where
    I: IntoIterator<Item = &'a Share>,
{
    let shares: Vec<&Share> = shares.into_iter().collect();
    if shares.len() != k {
        return Err(CombineError::WrongCount {
            expected: k,
            got: shares.len(),
        });
    }
    let first = shares[0];
    let mut signers = BTreeSet::new();
    for s in &shares {
        if s.threshold != k || s.message != first.message {
            return Err(CombineError::MixedMessage);
        }
        if !signers.insert(s.signer) {
            return Err(CombineError::DuplicateSigner(s.signer));
        }
        if !share_verify(s) {
            return Err(CombineError::InvalidShare(s.signer));
        }
    }
    let ids: Vec<u8> = signers.iter().flat_map(|p| p.get().to_be_bytes()).collect();
    Ok(CombinedSig {
        threshold: k,
        message_digest: first.message.digest(),
        signer_set_digest: sha256(&[b"sba-lab/signers", &ids]),
    })
}

pub fn combined_verify(k: usize, m: &SchemeMessage, sig: &CombinedSig) -> bool {
    sig.threshold == k && sig.message_digest == m.digest()
}

fn share_mac(signer: ProcessId, k: usize, m: &SchemeMessage) -> [u8; 16] {
    let d = sha256(&[
        b"sba-lab/share",
        &signer.get().to_be_bytes(),
        &(k as u64).to_be_bytes(),
        m.as_bytes(),
    ]);
    let mut mac = [0u8; 16];
    mac.copy_from_slice(&d[..16]);
    mac
}

pub(crate) fn sha256(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn ser_hex<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}
