//! Run records and invariant-violation reporting.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::types::{Certificate, CertificateKind, Layer, ProcessId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A Byzantine outbox claimed a correct sender.
    Authentication,
    /// A combined signature verifies without enough correct signers behind it.
    Forgery,
    /// Under unanimity, a certificate legitimizing another value exists.
    CertificationSafety,
    /// BUCKET liveness or simultaneous-stop failure.
    Certification,
    StrongValidity,
    Agreement,
    Termination,
    ExternalValidity,
    BroadcastConsistency,
    MissingAllowAnyQuorum,
    NoValidOutcome,
    InvalidProposal,
    ProtocolOrder,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub round: Option<u64>,
    pub process: Option<ProcessId>,
    pub detail: String,
}

impl Violation {
    pub fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Violation {
            kind,
            round: None,
            process: None,
            detail: detail.into(),
        }
    }

    pub fn at(mut self, round: u64, process: ProcessId) -> Self {
        self.round = Some(round);
        self.process = Some(process);
        self
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(r) = self.round {
            write!(f, " @round {r}")?;
        }
        if let Some(p) = self.process {
            write!(f, " {p}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerWords {
    pub bucket: u64,
    pub strong: u64,
    pub eba: u64,
}

impl LayerWords {
    pub fn add(&mut self, layer: Layer, words: u64) {
        match layer {
            Layer::Bucket => self.bucket += words,
            Layer::Strong => self.strong += words,
            Layer::Eba => self.eba += words,
        }
    }

    pub fn non_eba(&self) -> u64 {
        self.bucket + self.strong
    }

    pub fn total(&self) -> u64 {
        self.bucket + self.strong + self.eba
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AcquireRecord {
    pub iteration: u64,
    pub round: u64,
    pub value: Value,
    pub kind: CertificateKind,
}

/// Correct-sent words within one BUCKET iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub leader: ProcessId,
    pub leader_correct: bool,
    /// Every correct process had acquired a certificate before the iteration began.
    pub all_certified_before: bool,
    pub words: u64,
}

/// Per-correct-process outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessRecord {
    pub id: ProcessId,
    pub proposal: Value,
    pub decision: Option<Value>,
    pub decision_round: Option<u64>,
    /// Certificate of the first non-⊥ EBA output, which the decision came from.
    pub decision_certificate: Option<Certificate>,
    pub acquire: Option<AcquireRecord>,
    pub stop_round: Option<u64>,
    pub words: LayerWords,
    /// Resolved output digest of every EBA broadcast instance, `None` for ⊥.
    pub eba_outputs: Option<Vec<Option<String>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub protocol: String,
    pub t: usize,
    pub c: String,
    pub n: usize,
    pub t_o: usize,
    pub f: usize,
    pub strategy: String,
    pub seed: u64,
    pub byzantine: Vec<ProcessId>,
    pub rounds: u64,
    pub processes: Vec<ProcessRecord>,
    pub words: LayerWords,
    pub iterations: Vec<IterationRecord>,
    /// Distinct validated certificates seen anywhere in the run, by kind.
    pub certificates_seen: BTreeMap<CertificateKind, usize>,
    /// Validated certificates that legitimize a value other than the unanimous proposal.
    pub foreign_certificates: usize,
    pub violations: Vec<Violation>,
    pub digest: String,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn decisions(&self) -> impl Iterator<Item = Option<Value>> + '_ {
        self.processes.iter().map(|p| p.decision)
    }

    pub fn violations_of(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }
}
