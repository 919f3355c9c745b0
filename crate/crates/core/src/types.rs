//! System configuration, values, certificates and the message vocabulary.

use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{combined_verify, CombinedSig, SchemeMessage, Share};

/// 1-based process identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(u32);

impl ProcessId {
    pub const fn new(id: u32) -> Self {
        ProcessId(id)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(i: usize) -> Self {
        ProcessId(i as u32 + 1)
    }
}

impl fmt::Debug for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Value(pub u64);

pub const V_MIN: Value = Value(0);
pub const V_MAX: Value = Value(u64::MAX);

/// Value broadcast alongside negative certificates.
pub const DEFAULT_VALUE: Value = V_MIN;

/// Tag signed by `allow-any` shares; a `(t+1)`-combination over it is a general certificate.
pub const ANY_VALUE_TAG: &[u8] = b"any value";

impl Value {
    /// 8-byte big-endian encoding.
    pub fn scheme_message(self) -> SchemeMessage {
        SchemeMessage::from_bytes(self.0.to_be_bytes().to_vec())
    }

    pub fn from_scheme_message(m: &SchemeMessage) -> Option<Value> {
        let bytes: [u8; 8] = m.as_bytes().try_into().ok()?;
        Some(Value(u64::from_be_bytes(bytes)))
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            V_MAX => write!(f, "MAX"),
            Value(v) => write!(f, "{v}"),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

pub fn any_value_message() -> SchemeMessage {
    SchemeMessage::from_bytes(ANY_VALUE_TAG.to_vec())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("c must lie in (0, 1], got {0}")]
    InvalidC(String),
    #[error("t must be at least 1")]
    InvalidT,
    #[error("f = {f} exceeds t = {t}")]
    TooManyFaults { f: usize, t: usize },
}

/// System parameters: `n = 2t + 1 + ceil(c t)` and `t_o = floor(c t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub t: usize,
    pub c: Ratio<u64>,
    pub n: usize,
    pub t_o: usize,
    pub f_actual: usize,
}

impl Config {
    /// `t + 1`, the threshold for every certificate signature.
    pub fn quorum(&self) -> usize {
        self.t + 1
    }

    /// `n - t_o`, the disclose count a leader needs before partitioning.
    pub fn optimistic_quorum(&self) -> usize {
        self.n - self.t_o
    }

    pub fn with_faults(mut self, f: usize) -> Result<Self, ConfigError> {
        if f > self.t {
            return Err(ConfigError::TooManyFaults { f, t: self.t });
        }
        self.f_actual = f;
        Ok(self)
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> {
        (1..=self.n as u32).map(ProcessId::new)
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        p.get() >= 1 && p.get() as usize <= self.n
    }

    pub fn c_string(&self) -> String {
        format_ratio(&self.c)
    }
}

pub fn make_config(t: usize, c: Ratio<u64>) -> Result<Config, ConfigError> {
    if *c.numer() == 0 || c > Ratio::from_integer(1) {
        return Err(ConfigError::InvalidC(format_ratio(&c)));
    }
    if t == 0 {
        return Err(ConfigError::InvalidT);
    }
    let ct = c * Ratio::from_integer(t as u64);
    let n = 2 * t + 1 + ct.ceil().to_integer() as usize;
    let t_o = ct.floor().to_integer() as usize;
    debug_assert!(n - t_o > 2 * t);
    Ok(Config {
        t,
        c,
        n,
        t_o,
        f_actual: 0,
    })
}

/// Parses `"1"`, `"1/2"` or an exact decimal such as `"0.5"`.
pub fn parse_ratio(s: &str) -> Result<Ratio<u64>, ConfigError> {
    let bad = || ConfigError::InvalidC(s.to_string());
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num: u64 = num.trim().parse().map_err(|_| bad())?;
        let den: u64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(num, den));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let den = 10u64.pow(frac.len() as u32);
        let frac: u64 = frac.parse().map_err(|_| bad())?;
        let num = int.checked_mul(den).and_then(|x| x.checked_add(frac)).ok_or_else(bad)?;
        return Ok(Ratio::new(num, den));
    }
    s.parse::<u64>().map(Ratio::from_integer).map_err(|_| bad())
}

pub fn format_ratio(c: &Ratio<u64>) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

/// Value interval `[x, y)`, or the closed `[x, V_MAX]` when terminal.
///
/// Terminality is part of the signed description, so a share on a half-open
/// `[x, V_MAX)` cannot be reused as the closed terminal interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub x: Value,
    pub y: Value,
    pub terminal: bool,
}

impl Interval {
    pub fn new(x: Value, y: Value) -> Self {
        Interval { x, y, terminal: false }
    }

    /// The closed interval `[x, V_MAX]`.
    pub fn terminal(x: Value) -> Self {
        Interval {
            x,
            y: V_MAX,
            terminal: true,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// `x < y`; a terminal interval must end at `V_MAX` and may be the singleton `[V_MAX, V_MAX]`.
    pub fn is_well_formed(&self) -> bool {
        if self.terminal {
            self.y == V_MAX
        } else {
            self.x < self.y
        }
    }

    pub fn contains(&self, v: Value) -> bool {
        self.x <= v && (v < self.y || self.is_terminal())
    }

    /// 17-byte `(x, y, terminal)` encoding.
    pub fn scheme_message(&self) -> SchemeMessage {
        let mut b = Vec::with_capacity(17);
        b.extend_from_slice(&self.x.0.to_be_bytes());
        b.extend_from_slice(&self.y.0.to_be_bytes());
        b.push(self.terminal as u8);
        SchemeMessage::from_bytes(b)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_terminal() {
            write!(f, "[{}, {}]", self.x, self.y)
        } else {
            write!(f, "[{}, {})", self.x, self.y)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Group {
    pub interval: Interval,
    pub tsig: CombinedSig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Specific,
    General,
    Negative,
}

/// Largest number of groups a negative certificate may carry.
pub const MAX_GROUPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// `(t+1)`-combined signature over one value. Also used for positive bucket certificates.
    Specific { value: Value, sig: CombinedSig },
    /// `(t+1)`-combined signature over the "any value" tag.
    General { sig: CombinedSig },
    /// Chain of signed groups covering `[V_MIN, V_MAX]`.
    Negative {
        #[serde(serialize_with = "ser_groups")]
        groups: Arc<[Group]>,
    },
}

impl Certificate {
    pub fn kind(&self) -> CertificateKind {
        match self {
            Certificate::Specific { .. } => CertificateKind::Specific,
            Certificate::General { .. } => CertificateKind::General,
            Certificate::Negative { .. } => CertificateKind::Negative,
        }
    }

    pub fn negative(groups: Vec<Group>) -> Self {
        Certificate::Negative { groups: groups.into() }
    }

    pub fn words(&self) -> u64 {
        match self {
            Certificate::Specific { .. } | Certificate::General { .. } => 1,
            Certificate::Negative { groups } => 3 * groups.len() as u64,
        }
    }

    pub fn combined_sigs(&self) -> Vec<&CombinedSig> {
        match self {
            Certificate::Specific { sig, .. } | Certificate::General { sig } => vec![sig],
            Certificate::Negative { groups } => groups.iter().map(|g| &g.tsig).collect(),
        }
    }

    /// Whether the certificate legitimizes `v` and no other value.
    pub fn is_value_specific(&self) -> bool {
        matches!(self, Certificate::Specific { .. })
    }
}

fn ser_groups<S: Serializer>(groups: &Arc<[Group]>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(groups.iter())
}

/// Checks the chain, boundary and signature invariants of a negative certificate.
pub fn negative_chain_valid(groups: &[Group], cfg: &Config) -> bool {
    if groups.is_empty() || groups.len() > MAX_GROUPS {
        return false;
    }
    let last = groups.len() - 1;
    if groups[0].interval.x != V_MIN || !groups[last].interval.is_terminal() {
        return false;
    }
    let chained = groups
        .windows(2)
        .all(|w| !w[0].interval.is_terminal() && w[0].interval.y == w[1].interval.x);
    chained
        && groups.iter().all(|g| {
            g.interval.is_well_formed() && combined_verify(cfg.quorum(), &g.interval.scheme_message(), &g.tsig)
        })
}

/// `validate(v, cert)`. General and negative certificates ignore `v`.
pub fn validate(v: Value, cert: &Certificate, cfg: &Config) -> bool {
    match cert {
        Certificate::Specific { value, sig } => *value == v && combined_verify(cfg.quorum(), &v.scheme_message(), sig),
        Certificate::General { sig } => combined_verify(cfg.quorum(), &any_value_message(), sig),
        Certificate::Negative { groups } => negative_chain_valid(groups, cfg),
    }
}

/// Payload of one authenticated-broadcast relay inside the reference EBA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EbaPayload {
    pub instance: ProcessId,
    pub value: Value,
    pub certificate: Certificate,
    pub chain: Vec<Share>,
}

impl EbaPayload {
    pub fn words(&self) -> u64 {
        1 + self.certificate.words() + self.chain.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Bucket,
    Strong,
    Eba,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Bucket, Layer::Strong, Layer::Eba];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProtocolMessage {
    Disclose {
        value: Value,
        share: Share,
    },
    PartitionReq {
        descriptions: Vec<Interval>,
    },
    PartitionReply {
        negatives: Vec<(Interval, Share)>,
    },
    #[serde(rename = "certificate")]
    CertificateMsg {
        value: Value,
        certificate: Certificate,
    },
    AidReq,
    AidReply {
        value: Option<Value>,
        certificate: Option<Certificate>,
    },
    HelpReq,
    HelpReply {
        forward_value: Option<Value>,
        certificate: Option<Certificate>,
        proposal_share: Share,
    },
    FinalCertificate {
        value: Value,
        certificate: Certificate,
    },
    AllowAny {
        share: Share,
    },
    #[serde(rename = "eba")]
    EbaMsg(EbaPayload),
}

impl ProtocolMessage {
    pub fn layer(&self) -> Layer {
        use ProtocolMessage::*;
        match self {
            Disclose { .. }
            | PartitionReq { .. }
            | PartitionReply { .. }
            | CertificateMsg { .. }
            | AidReq
            | AidReply { .. } => Layer::Bucket,
            HelpReq | HelpReply { .. } | FinalCertificate { .. } | AllowAny { .. } => Layer::Strong,
            EbaMsg(_) => Layer::Eba,
        }
    }

    pub fn certificates(&self) -> Vec<(Option<Value>, &Certificate)> {
        use ProtocolMessage::*;
        match self {
            CertificateMsg { value, certificate } | FinalCertificate { value, certificate } => {
                vec![(Some(*value), certificate)]
            }
            AidReply {
                value,
                certificate: Some(c),
            }
            | HelpReply {
                forward_value: value,
                certificate: Some(c),
                ..
            } => vec![(*value, c)],
            EbaMsg(p) => vec![(Some(p.value), &p.certificate)],
            _ => Vec::new(),
        }
    }

    pub fn shares(&self) -> Vec<&Share> {
        use ProtocolMessage::*;
        match self {
            Disclose { share, .. } | AllowAny { share } => vec![share],
            HelpReply { proposal_share, .. } => vec![proposal_share],
            PartitionReply { negatives } => negatives.iter().map(|(_, s)| s).collect(),
            EbaMsg(p) => p.chain.iter().collect(),
            _ => Vec::new(),
        }
    }
}

/// Word cost: one header word, one per value, share or combined signature,
/// two per bare interval description and three per signed group.
pub fn word_cost(msg: &ProtocolMessage) -> u64 {
    use ProtocolMessage::*;
    let opt_value = |v: &Option<Value>| v.is_some() as u64;
    let opt_cert = |c: &Option<Certificate>| c.as_ref().map_or(0, Certificate::words);
    1 + match msg {
        Disclose { .. } => 2,
        PartitionReq { descriptions } => 2 * descriptions.len() as u64,
        PartitionReply { negatives } => 3 * negatives.len() as u64,
        CertificateMsg { certificate, .. } | FinalCertificate { certificate, .. } => 1 + certificate.words(),
        AidReq | HelpReq => 0,
        AidReply { value, certificate } => opt_value(value) + opt_cert(certificate),
        HelpReply {
            forward_value,
            certificate,
            ..
        } => opt_value(forward_value) + opt_cert(certificate) + 1,
        AllowAny { .. } => 1,
        EbaMsg(p) => p.words(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    To(ProcessId),
    /// Every process, the sender included.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub dest: Dest,
    pub msg: ProtocolMessage,
}

impl Outgoing {
    pub fn to(p: ProcessId, msg: ProtocolMessage) -> Self {
        Outgoing { dest: Dest::To(p), msg }
    }

    pub fn broadcast(msg: ProtocolMessage) -> Self {
        Outgoing { dest: Dest::All, msg }
    }
}

/// A delivered message. `from` is authenticated by the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Envelope {
    pub round: u64,
    pub from: ProcessId,
    pub to: ProcessId,
    pub layer: Layer,
    pub msg: ProtocolMessage,
}

impl Envelope {
    pub fn new(round: u64, from: ProcessId, to: ProcessId, msg: ProtocolMessage) -> Self {
        Envelope {
            round,
            from,
            to,
            layer: msg.layer(),
            msg,
        }
    }
}
