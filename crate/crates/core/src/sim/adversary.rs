//! Rushing adversary interface and the built-in strategies.
//!
//! In every round the adversary sees all messages correct processes send in
//! that round, plus everything delivered to Byzantine processes, and then
//! chooses the Byzantine messages of the same round. It may sign only as a
//! Byzantine process; [`ByzantineSigner`] enforces that.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bucket;
use crate::codec::eba_chain_message;
use crate::crypto::{combine, share_verify_for, SchemeMessage, Share};
use crate::eba::{self, CHAIN_THRESHOLD};
use crate::partition::{construct_negative_certificate, partition, Disclosure, GroupLayout};
use crate::strong::{self, Phase};
use crate::types::{
    any_value_message, validate, Certificate, Config, Dest, EbaPayload, Envelope, Interval, ProcessId, ProtocolMessage,
    Value, DEFAULT_VALUE, MAX_GROUPS, V_MAX, V_MIN,
};

use super::machine::{self, Machine};
use super::scenario::{Protocol, Scenario, Strategy};

/// Everything the adversary may look at in one round.
pub struct AdversaryView<'a> {
    pub round: u64,
    pub cfg: &'a Config,
    pub protocol: Protocol,
    pub byzantine: &'a [ProcessId],
    pub correct: &'a [ProcessId],
    /// Messages correct processes send this round.
    pub correct_out: &'a [Envelope],
    /// Messages delivered to Byzantine processes for this round.
    pub byz_inbox: &'a [Envelope],
}

impl AdversaryView<'_> {
    fn stage(&self) -> Stage {
        match self.protocol {
            Protocol::BucketOnly => {
                let (iteration, round) = bucket::position(self.round);
                Stage::Certification { iteration, round }
            }
            Protocol::Strong => match strong::phase_of(self.cfg, self.round) {
                Phase::Certification => {
                    let (iteration, round) = bucket::position(self.round);
                    Stage::Certification { iteration, round }
                }
                Phase::Agreement(r) => Stage::Agreement(r),
                Phase::Eba(r) => Stage::Eba(r),
                Phase::Decided => Stage::Done,
            },
        }
    }

    fn is_byzantine(&self, p: ProcessId) -> bool {
        self.byzantine.binary_search(&p).is_ok()
    }

    fn inbox_of(&self, p: ProcessId) -> Vec<Envelope> {
        self.byz_inbox.iter().filter(|e| e.to == p).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Certification { iteration: u64, round: u64 },
    Agreement(u8),
    Eba(u64),
    Done,
}

/// Signing oracle restricted to Byzantine identities.
#[derive(Debug, Clone)]
pub struct ByzantineSigner {
    ids: Vec<ProcessId>,
}

impl ByzantineSigner {
    pub fn new(mut ids: Vec<ProcessId>) -> Self {
        ids.sort();
        ids.dedup();
        ByzantineSigner { ids }
    }

    pub fn ids(&self) -> &[ProcessId] {
        &self.ids
    }

    pub fn sign(&self, signer: ProcessId, k: usize, m: &SchemeMessage) -> Option<Share> {
        self.ids
            .binary_search(&signer)
            .is_ok()
            .then(|| crate::crypto::share_sign(signer, k, m))
    }

    /// One share per Byzantine id.
    pub fn sign_all(&self, k: usize, m: &SchemeMessage) -> Vec<Share> {
        self.ids.iter().filter_map(|p| self.sign(*p, k, m)).collect()
    }
}

pub trait Adversary: Send {
    fn act(&mut self, view: &AdversaryView<'_>, signer: &ByzantineSigner) -> Vec<Envelope>;

    /// Certificates the adversary assembled and kept, checked by the certificate registry.
    fn held_certificates(&self) -> Vec<(Value, Certificate)> {
        Vec::new()
    }
}

pub fn build(s: &Scenario) -> Box<dyn Adversary> {
    let correct = s.correct();
    match &s.strategy {
        Strategy::Silent => Box::new(Silent),
        Strategy::CrashAt { round } => {
            let total = machine::total_rounds(s.protocol, &s.cfg);
            let at = round.unwrap_or(1 + s.seed % total);
            Box::new(CrashAt {
                crew: HonestCrew::new(s, |p| s.proposals[p.index()]),
                at,
            })
        }
        Strategy::EquivocatingLeader => Box::new(Equivocator::new(s, &correct)),
        Strategy::HelpreqFlood => Box::new(Flood),
        Strategy::ValueForger { target } => {
            let target = target.unwrap_or_else(|| {
                let top = correct.iter().map(|p| s.proposals[p.index()]).max().unwrap_or(V_MIN);
                if top == V_MAX {
                    Value(V_MAX.0 - 1)
                } else {
                    Value(top.0 + 1)
                }
            });
            Box::new(Forger::new(target))
        }
        Strategy::SplitWorld => {
            let mut order = correct.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(s.seed ^ 0x5911_7000));
            let mut half: Vec<ProcessId> = order[..order.len().div_ceil(2)].to_vec();
            half.sort();
            Box::new(SplitWorld {
                crew: HonestCrew::new(s, |p| Value(s.proposals[p.index()].0.wrapping_add(1))),
                half,
            })
        }
    }
}

fn push_to<I>(out: &mut Vec<Envelope>, round: u64, from: ProcessId, to: I, msg: &ProtocolMessage)
where
    I: IntoIterator<Item = ProcessId>,
{
    for p in to {
        out.push(Envelope::new(round, from, p, msg.clone()));
    }
}

/// Validated `(value, certificate)` pairs observed so far.
#[derive(Debug, Default)]
struct CertBook {
    pairs: Vec<(Value, Certificate)>,
    seen: HashSet<Certificate>,
}

impl CertBook {
    fn note(&mut self, v: Value, c: &Certificate, cfg: &Config) {
        if self.seen.contains(c) {
            return;
        }
        self.seen.insert(c.clone());
        let v = match c {
            Certificate::Specific { value, .. } => *value,
            _ => v,
        };
        if validate(v, c, cfg) {
            self.pairs.push((v, c.clone()));
        }
    }

    fn observe(&mut self, msgs: &[Envelope], cfg: &Config) {
        for e in msgs {
            match &e.msg {
                ProtocolMessage::CertificateMsg { value, certificate }
                | ProtocolMessage::FinalCertificate { value, certificate } => self.note(*value, certificate, cfg),
                ProtocolMessage::AidReply {
                    value: Some(v),
                    certificate: Some(c),
                }
                | ProtocolMessage::HelpReply {
                    forward_value: Some(v),
                    certificate: Some(c),
                    ..
                } => self.note(*v, c, cfg),
                ProtocolMessage::EbaMsg(p) => self.note(p.value, &p.certificate, cfg),
                _ => {}
            }
        }
    }

    fn first(&self) -> Option<&(Value, Certificate)> {
        self.pairs.first()
    }

    /// Two different pairs when available; otherwise the second is a relabelled copy of the first.
    fn two(&self) -> Option<((Value, Certificate), (Value, Certificate))> {
        let a = self.pairs.first()?.clone();
        let b = match self.pairs.get(1) {
            Some(b) => b.clone(),
            None => (Value(a.0 .0 ^ 1), a.1.clone()),
        };
        Some((a, b))
    }

    fn any_specific(&self) -> Option<&Certificate> {
        self.pairs
            .iter()
            .map(|(_, c)| c)
            .find(|c| c.kind() == crate::types::CertificateKind::Specific)
    }
}

/// Byzantine processes running the correct protocol.
struct HonestCrew {
    machines: Vec<(ProcessId, Machine)>,
}

impl HonestCrew {
    fn new(s: &Scenario, proposal: impl Fn(ProcessId) -> Value) -> Self {
        HonestCrew {
            machines: s
                .byzantine
                .iter()
                .map(|p| {
                    let m = Machine::new(s.protocol, proposal(*p), &s.cfg, *p).expect("byzantine ids are in range");
                    (*p, m)
                })
                .collect(),
        }
    }

    /// Steps every machine; `deliver` chooses the recipients of each broadcast or unicast.
    fn step(&mut self, view: &AdversaryView<'_>, deliver: impl Fn(Dest) -> Vec<ProcessId>) -> Vec<Envelope> {
        let mut out = Vec::new();
        for (p, m) in &mut self.machines {
            let inbox = view.inbox_of(*p);
            let Ok((outgoing, _)) = m.step(view.round, &inbox) else {
                continue;
            };
            for o in outgoing {
                push_to(&mut out, view.round, *p, deliver(o.dest), &o.msg);
            }
        }
        out
    }
}

fn everyone(cfg: &Config, d: Dest) -> Vec<ProcessId> {
    match d {
        Dest::To(p) => vec![p],
        Dest::All => cfg.processes().collect(),
    }
}

struct Silent;

impl Adversary for Silent {
    fn act(&mut self, _: &AdversaryView<'_>, _: &ByzantineSigner) -> Vec<Envelope> {
        Vec::new()
    }
}

struct CrashAt {
    crew: HonestCrew,
    at: u64,
}

impl Adversary for CrashAt {
    fn act(&mut self, view: &AdversaryView<'_>, _: &ByzantineSigner) -> Vec<Envelope> {
        if view.round >= self.at {
            return Vec::new();
        }
        let cfg = view.cfg;
        self.crew.step(view, |d| everyone(cfg, d))
    }
}

struct SplitWorld {
    crew: HonestCrew,
    half: Vec<ProcessId>,
}

impl Adversary for SplitWorld {
    fn act(&mut self, view: &AdversaryView<'_>, _: &ByzantineSigner) -> Vec<Envelope> {
        let half = &self.half;
        let cfg = view.cfg;
        let byz = view.byzantine;
        self.crew.step(view, |d| {
            everyone(cfg, d)
                .into_iter()
                .filter(|p| half.binary_search(p).is_ok() || byz.binary_search(p).is_ok())
                .collect()
        })
    }
}

/// Requests aid and help from every correct process in every round where it is meaningful.
/// As a leader it starts certificate creation and asks for signatures on five intervals.
struct Flood;

fn five_intervals() -> Vec<Interval> {
    let b = [V_MIN.0, 1 << 60, 1 << 61, 1 << 62, 1 << 63];
    let mut d: Vec<Interval> = b.windows(2).map(|w| Interval::new(Value(w[0]), Value(w[1]))).collect();
    d.push(Interval::terminal(Value(b[4])));
    debug_assert_eq!(d.len(), MAX_GROUPS);
    d
}

impl Adversary for Flood {
    fn act(&mut self, view: &AdversaryView<'_>, _: &ByzantineSigner) -> Vec<Envelope> {
        let mut out = Vec::new();
        let r = view.round;
        let correct = view.correct.iter().copied();
        match view.stage() {
            Stage::Certification { iteration, round } => {
                let leader = bucket::leader_of(iteration);
                for &b in view.byzantine {
                    push_to(&mut out, r, b, correct.clone(), &ProtocolMessage::AidReq);
                    if b == leader && round == 3 {
                        let req = ProtocolMessage::PartitionReq {
                            descriptions: five_intervals(),
                        };
                        push_to(&mut out, r, b, correct.clone(), &req);
                    }
                }
            }
            Stage::Agreement(_) => {
                for &b in view.byzantine {
                    push_to(&mut out, r, b, correct.clone(), &ProtocolMessage::HelpReq);
                }
            }
            Stage::Eba(_) | Stage::Done => {}
        }
        out
    }
}

/// Verified correct disclosures addressed to `leader` in this inbox.
fn disclosures_to(view: &AdversaryView<'_>, leader: ProcessId) -> BTreeMap<ProcessId, (Value, Share)> {
    let k = view.cfg.quorum();
    let mut d = BTreeMap::new();
    for e in view
        .byz_inbox
        .iter()
        .filter(|e| e.to == leader && !view.is_byzantine(e.from))
    {
        if let ProtocolMessage::Disclose { value, share } = &e.msg {
            if share_verify_for(share, e.from, k, &value.scheme_message()) {
                d.entry(e.from).or_insert((*value, share.clone()));
            }
        }
    }
    d
}

/// Correct partition-reply shares addressed to `leader` in this inbox.
fn partition_replies_to(view: &AdversaryView<'_>, leader: ProcessId) -> Vec<(ProcessId, Interval, Share)> {
    view.byz_inbox
        .iter()
        .filter(|e| e.to == leader)
        .filter_map(|e| match &e.msg {
            ProtocolMessage::PartitionReply { negatives } => Some((e.from, negatives)),
            _ => None,
        })
        .flat_map(|(from, n)| n.iter().map(move |(d, s)| (from, *d, s.clone())))
        .collect()
}

/// Adds every Byzantine signature on every interval of `layout` and tries to assemble a negative certificate.
fn assemble_negative(
    layout: &GroupLayout,
    mut replies: Vec<(ProcessId, Interval, Share)>,
    signer: &ByzantineSigner,
    cfg: &Config,
) -> Option<Certificate> {
    for d in &layout.descriptions {
        for s in signer.sign_all(cfg.quorum(), &d.scheme_message()) {
            replies.push((s.signer(), *d, s));
        }
    }
    construct_negative_certificate(layout, &replies, cfg)
}

/// Correct shares for `value` first, then Byzantine ones, combined if they reach `t + 1`.
fn specific_with_help(value: Value, correct: &[Share], signer: &ByzantineSigner, cfg: &Config) -> Option<Certificate> {
    let k = cfg.quorum();
    let mut shares: BTreeMap<ProcessId, Share> = correct.iter().map(|s| (s.signer(), s.clone())).collect();
    for s in signer.sign_all(k, &value.scheme_message()) {
        shares.entry(s.signer()).or_insert(s);
    }
    let sig = combine(k, shares.values().take(k)).ok()?;
    Some(Certificate::Specific { value, sig })
}

fn eba_pair_msg(
    instance: ProcessId,
    value: Value,
    certificate: &Certificate,
    signers: &[ProcessId],
    signer: &ByzantineSigner,
) -> Option<ProtocolMessage> {
    let m = eba_chain_message(instance, value, certificate);
    let chain = signers
        .iter()
        .map(|p| signer.sign(*p, CHAIN_THRESHOLD, &m))
        .collect::<Option<Vec<_>>>()?;
    Some(ProtocolMessage::EbaMsg(EbaPayload {
        instance,
        value,
        certificate: certificate.clone(),
        chain,
    }))
}

/// Shows different things to two halves of the correct processes: as BUCKET
/// leader (aid request to some, aid reply to others, two certificates or two
/// partition layouts), in the agreement rounds (different certificates and
/// allow-any shares) and as EBA sender (two pairs, plus a late chain signed by
/// every Byzantine process).
struct Equivocator {
    a: Vec<ProcessId>,
    b: Vec<ProcessId>,
    book: CertBook,
    layouts: Vec<(GroupLayout, Vec<ProcessId>)>,
    held: Vec<(Value, Certificate)>,
}

impl Equivocator {
    fn new(s: &Scenario, correct: &[ProcessId]) -> Self {
        let mut order = correct.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s.seed ^ 0xe901_0000));
        let split = order.len() / 2;
        let mut a = order[..split].to_vec();
        let mut b = order[split..].to_vec();
        a.sort();
        b.sort();
        Equivocator {
            a,
            b,
            book: CertBook::default(),
            layouts: Vec::new(),
            held: Vec::new(),
        }
    }

    fn leader_round(
        &mut self,
        view: &AdversaryView<'_>,
        signer: &ByzantineSigner,
        leader: ProcessId,
        round: u64,
        out: &mut Vec<Envelope>,
    ) {
        let r = view.round;
        let cfg = view.cfg;
        // b[0] gets an aid reply instead of an aid request
        let (aid_reply_to, rest_b) = match self.b.split_first() {
            Some((x, rest)) => (Some(*x), rest.to_vec()),
            None => (None, Vec::new()),
        };
        match round {
            1 => {
                self.layouts.clear();
                let to: Vec<ProcessId> = self.a.iter().chain(rest_b.iter()).copied().collect();
                push_to(out, r, leader, to, &ProtocolMessage::AidReq);
            }
            2 => {
                if let (Some(p), Some((v, c))) = (aid_reply_to, self.book.first()) {
                    let msg = ProtocolMessage::AidReply {
                        value: Some(*v),
                        certificate: Some(c.clone()),
                    };
                    push_to(out, r, leader, [p], &msg);
                }
            }
            3 => {
                let discl = disclosures_to(view, leader);
                let mut by_value: BTreeMap<Value, Vec<Share>> = BTreeMap::new();
                for (v, s) in discl.values() {
                    by_value.entry(*v).or_default().push(s.clone());
                }
                let certs: Vec<(Value, Certificate)> = by_value
                    .iter()
                    .filter_map(|(v, s)| specific_with_help(*v, s, signer, cfg).map(|c| (*v, c)))
                    .take(2)
                    .collect();
                let halves = [self.a.clone(), rest_b];
                if !certs.is_empty() {
                    for (i, half) in halves.iter().enumerate() {
                        let (v, c) = &certs[i % certs.len()];
                        if i < certs.len() {
                            self.held.push((*v, c.clone()));
                        }
                        let msg = ProtocolMessage::CertificateMsg {
                            value: *v,
                            certificate: c.clone(),
                        };
                        push_to(out, r, leader, half.iter().copied(), &msg);
                    }
                    return;
                }
                for (half, fake) in halves.iter().zip([V_MIN, V_MAX]) {
                    let mut list: Vec<Disclosure> = discl
                        .iter()
                        .map(|(p, (v, s))| Disclosure {
                            from: *p,
                            value: *v,
                            share: s.clone(),
                        })
                        .collect();
                    for b in signer.ids() {
                        if let Some(share) = signer.sign(*b, cfg.quorum(), &fake.scheme_message()) {
                            list.push(Disclosure {
                                from: *b,
                                value: fake,
                                share,
                            });
                        }
                    }
                    if let Ok(layout) = partition(&list, cfg) {
                        let msg = ProtocolMessage::PartitionReq {
                            descriptions: layout.descriptions.clone(),
                        };
                        push_to(out, r, leader, half.iter().copied(), &msg);
                        self.layouts.push((layout, half.clone()));
                    }
                }
            }
            5 => {
                let replies = partition_replies_to(view, leader);
                for (layout, half) in std::mem::take(&mut self.layouts) {
                    if let Some(cert) = assemble_negative(&layout, replies.clone(), signer, cfg) {
                        self.held.push((DEFAULT_VALUE, cert.clone()));
                        let msg = ProtocolMessage::CertificateMsg {
                            value: DEFAULT_VALUE,
                            certificate: cert,
                        };
                        push_to(out, r, leader, half, &msg);
                    }
                }
            }
            _ => {}
        }
    }
}

impl Adversary for Equivocator {
    fn act(&mut self, view: &AdversaryView<'_>, signer: &ByzantineSigner) -> Vec<Envelope> {
        self.book.observe(view.correct_out, view.cfg);
        let mut out = Vec::new();
        let r = view.round;
        let cfg = view.cfg;
        let k = cfg.quorum();
        match view.stage() {
            Stage::Certification { iteration, round } => {
                let leader = bucket::leader_of(iteration);
                if view.is_byzantine(leader) {
                    self.leader_round(view, signer, leader, round, &mut out);
                }
            }
            Stage::Agreement(2) => {
                let pairs = self.book.two();
                for &b in view.byzantine {
                    let askers: BTreeSet<ProcessId> = view
                        .byz_inbox
                        .iter()
                        .filter(|e| e.to == b && matches!(e.msg, ProtocolMessage::HelpReq))
                        .map(|e| e.from)
                        .collect();
                    for (i, half) in [&self.a, &self.b].into_iter().enumerate() {
                        let to: Vec<ProcessId> = half.iter().filter(|p| askers.contains(p)).copied().collect();
                        let (fv, cert) = match &pairs {
                            Some((x, y)) => {
                                let (v, c) = if i == 0 { x } else { y };
                                (Some(*v), Some(c.clone()))
                            }
                            None => (None, None),
                        };
                        let Some(share) = signer.sign(b, k, &Value(i as u64).scheme_message()) else {
                            continue;
                        };
                        let msg = ProtocolMessage::HelpReply {
                            forward_value: fv,
                            certificate: cert,
                            proposal_share: share,
                        };
                        push_to(&mut out, r, b, to, &msg);
                    }
                }
            }
            Stage::Agreement(3) => {
                let pairs = self.book.two();
                for &b in view.byzantine {
                    if let Some((x, y)) = &pairs {
                        for ((v, c), half) in [(x, &self.a), (y, &self.b)] {
                            let msg = ProtocolMessage::FinalCertificate {
                                value: *v,
                                certificate: c.clone(),
                            };
                            push_to(&mut out, r, b, half.iter().copied(), &msg);
                        }
                    }
                    if let Some(share) = signer.sign(b, k, &any_value_message()) {
                        push_to(
                            &mut out,
                            r,
                            b,
                            self.a.iter().copied(),
                            &ProtocolMessage::AllowAny { share },
                        );
                    }
                }
            }
            Stage::Eba(e) => {
                let senders: Vec<ProcessId> = eba::senders(cfg).filter(|p| view.is_byzantine(*p)).collect();
                let Some((x, y)) = self.book.two() else {
                    return out;
                };
                let f = view.byzantine.len() as u64;
                for &s in &senders {
                    if e == 1 {
                        for ((v, c), half) in [(&x, &self.a), (&y, &self.b)] {
                            if let Some(msg) = eba_pair_msg(s, *v, c, &[s], signer) {
                                push_to(&mut out, r, s, half.iter().copied(), &msg);
                            }
                        }
                    }
                }
                // a pair that surfaces late, carried by a chain of every Byzantine signature
                if f >= 2 && e == f + 1 && e <= cfg.t as u64 + 1 {
                    if let (Some(&s), Some(&target)) = (senders.first(), self.a.first().or(self.b.first())) {
                        let mut signers = vec![s];
                        signers.extend(view.byzantine.iter().filter(|p| **p != s));
                        let late = Value(x.0 .0.wrapping_add(2));
                        if let Some(msg) = eba_pair_msg(s, late, &x.1, &signers, signer) {
                            push_to(&mut out, r, s, [target], &msg);
                        }
                    }
                }
            }
            Stage::Agreement(_) | Stage::Done => {}
        }
        out
    }

    fn held_certificates(&self) -> Vec<(Value, Certificate)> {
        self.held.clone()
    }
}

/// Tries to certify `target`, a value no correct process proposed: discloses
/// it, isolates it in crafted partition layouts, relabels observed specific
/// certificates, and combines every share it can reach.
struct Forger {
    target: Value,
    book: CertBook,
    layout: Option<GroupLayout>,
    held: Vec<(Value, Certificate)>,
}

impl Forger {
    fn new(target: Value) -> Self {
        Forger {
            target,
            book: CertBook::default(),
            layout: None,
            held: Vec::new(),
        }
    }

    fn keep(&mut self, v: Value, c: Certificate) {
        if !self.held.iter().any(|(_, h)| *h == c) {
            self.held.push((v, c));
        }
    }

    /// Best certificate to attach to `target`: something held, else a relabelled specific one.
    fn attached(&self) -> Option<Certificate> {
        self.held
            .first()
            .map(|(_, c)| c.clone())
            .or_else(|| self.book.any_specific().cloned())
    }

    fn crafted_layout(&self) -> GroupLayout {
        let v = self.target;
        let mut descriptions = Vec::new();
        if v > V_MIN {
            descriptions.push(Interval::new(V_MIN, v));
        }
        if v < V_MAX {
            descriptions.push(Interval::new(v, Value(v.0 + 1)));
            descriptions.push(Interval::terminal(Value(v.0 + 1)));
        } else {
            descriptions.push(Interval::terminal(v));
        }
        GroupLayout {
            members: vec![Vec::new(); descriptions.len()],
            descriptions,
        }
    }

    fn leader_round(
        &mut self,
        view: &AdversaryView<'_>,
        signer: &ByzantineSigner,
        leader: ProcessId,
        round: u64,
        out: &mut Vec<Envelope>,
    ) {
        let r = view.round;
        let cfg = view.cfg;
        let correct = view.correct.iter().copied();
        match round {
            1 => push_to(out, r, leader, correct, &ProtocolMessage::AidReq),
            2 => {
                if let Some(c) = self.attached() {
                    let msg = ProtocolMessage::AidReply {
                        value: Some(self.target),
                        certificate: Some(c),
                    };
                    push_to(out, r, leader, correct, &msg);
                }
            }
            3 => {
                let discl = disclosures_to(view, leader);
                let on_target: Vec<Share> = discl
                    .values()
                    .filter(|(v, _)| *v == self.target)
                    .map(|(_, s)| s.clone())
                    .collect();
                if let Some(c) = specific_with_help(self.target, &on_target, signer, cfg) {
                    self.keep(self.target, c);
                }
                if let Some(c) = self.attached() {
                    let msg = ProtocolMessage::CertificateMsg {
                        value: self.target,
                        certificate: c,
                    };
                    push_to(out, r, leader, correct.clone(), &msg);
                }
                let mut list: Vec<Disclosure> = discl
                    .iter()
                    .map(|(p, (v, s))| Disclosure {
                        from: *p,
                        value: *v,
                        share: s.clone(),
                    })
                    .collect();
                for b in signer.ids() {
                    if let Some(share) = signer.sign(*b, cfg.quorum(), &self.target.scheme_message()) {
                        list.push(Disclosure {
                            from: *b,
                            value: self.target,
                            share,
                        });
                    }
                }
                let layout = partition(&list, cfg).unwrap_or_else(|_| self.crafted_layout());
                let msg = ProtocolMessage::PartitionReq {
                    descriptions: layout.descriptions.clone(),
                };
                push_to(out, r, leader, correct, &msg);
                self.layout = Some(layout);
            }
            5 => {
                if let Some(layout) = self.layout.take() {
                    let replies = partition_replies_to(view, leader);
                    if let Some(cert) = assemble_negative(&layout, replies, signer, cfg) {
                        self.keep(self.target, cert.clone());
                        let msg = ProtocolMessage::CertificateMsg {
                            value: self.target,
                            certificate: cert,
                        };
                        push_to(out, r, leader, correct, &msg);
                    }
                }
            }
            _ => {}
        }
    }

    /// Combines observed shares on `target` (proposal shares) and on the allow-any tag.
    fn harvest(&mut self, view: &AdversaryView<'_>, signer: &ByzantineSigner) {
        let cfg = view.cfg;
        let k = cfg.quorum();
        let target_msg = self.target.scheme_message();
        let tag = any_value_message();
        let mut on_target = Vec::new();
        let mut allow_any = Vec::new();
        for e in view.correct_out.iter().chain(view.byz_inbox) {
            match &e.msg {
                ProtocolMessage::HelpReply { proposal_share, .. }
                    if share_verify_for(proposal_share, e.from, k, &target_msg) =>
                {
                    on_target.push(proposal_share.clone())
                }
                ProtocolMessage::Disclose { share, .. } if share_verify_for(share, e.from, k, &target_msg) => {
                    on_target.push(share.clone())
                }
                ProtocolMessage::AllowAny { share } if share_verify_for(share, e.from, k, &tag) => {
                    allow_any.push(share.clone())
                }
                _ => {}
            }
        }
        if let Some(c) = specific_with_help(self.target, &on_target, signer, cfg) {
            self.keep(self.target, c);
        }
        let mut shares: BTreeMap<ProcessId, Share> = allow_any.into_iter().map(|s| (s.signer(), s)).collect();
        for s in signer.sign_all(k, &tag) {
            shares.entry(s.signer()).or_insert(s);
        }
        if let Ok(sig) = combine(k, shares.values().take(k)) {
            self.keep(self.target, Certificate::General { sig });
        }
    }
}

impl Adversary for Forger {
    fn act(&mut self, view: &AdversaryView<'_>, signer: &ByzantineSigner) -> Vec<Envelope> {
        let cfg = view.cfg;
        self.book.observe(view.correct_out, cfg);
        self.harvest(view, signer);
        let mut out = Vec::new();
        let r = view.round;
        let k = cfg.quorum();
        let correct = view.correct.iter().copied();
        match view.stage() {
            Stage::Certification { iteration, round } => {
                let leader = bucket::leader_of(iteration);
                if view.is_byzantine(leader) {
                    self.leader_round(view, signer, leader, round, &mut out);
                }
                for &b in view.byzantine.iter().filter(|b| **b != leader) {
                    if round == 2 {
                        if let Some(share) = signer.sign(b, k, &self.target.scheme_message()) {
                            let msg = ProtocolMessage::Disclose {
                                value: self.target,
                                share,
                            };
                            push_to(&mut out, r, b, [leader], &msg);
                        }
                    }
                    if round == 4 {
                        // sign every interval the leader asked about, the target's included
                        let asked = view.byz_inbox.iter().find_map(|e| match &e.msg {
                            ProtocolMessage::PartitionReq { descriptions } if e.to == b && e.from == leader => {
                                Some(descriptions.clone())
                            }
                            _ => None,
                        });
                        if let Some(d) = asked {
                            let negatives = d
                                .iter()
                                .filter_map(|iv| signer.sign(b, k, &iv.scheme_message()).map(|s| (*iv, s)))
                                .collect();
                            push_to(&mut out, r, b, [leader], &ProtocolMessage::PartitionReply { negatives });
                        }
                    }
                }
            }
            Stage::Agreement(1) => {
                for &b in view.byzantine {
                    push_to(&mut out, r, b, correct.clone(), &ProtocolMessage::HelpReq);
                }
            }
            Stage::Agreement(2) => {
                let cert = self.attached();
                for &b in view.byzantine {
                    if let Some(share) = signer.sign(b, k, &self.target.scheme_message()) {
                        let msg = ProtocolMessage::HelpReply {
                            forward_value: Some(self.target),
                            certificate: cert.clone(),
                            proposal_share: share,
                        };
                        push_to(&mut out, r, b, correct.clone(), &msg);
                    }
                }
            }
            Stage::Agreement(3) => {
                let cert = self.attached();
                for &b in view.byzantine {
                    if let Some(c) = &cert {
                        let msg = ProtocolMessage::FinalCertificate {
                            value: self.target,
                            certificate: c.clone(),
                        };
                        push_to(&mut out, r, b, correct.clone(), &msg);
                    }
                    if let Some(share) = signer.sign(b, k, &any_value_message()) {
                        push_to(&mut out, r, b, correct.clone(), &ProtocolMessage::AllowAny { share });
                    }
                }
            }
            Stage::Eba(1) => {
                if let Some(c) = self.attached() {
                    for s in eba::senders(cfg).filter(|p| view.is_byzantine(*p)) {
                        if let Some(msg) = eba_pair_msg(s, self.target, &c, &[s], signer) {
                            push_to(&mut out, r, s, correct.clone(), &msg);
                        }
                    }
                }
            }
            Stage::Agreement(_) | Stage::Eba(_) | Stage::Done => {}
        }
        out
    }

    fn held_certificates(&self) -> Vec<(Value, Certificate)> {
        self.held.clone()
    }
}
