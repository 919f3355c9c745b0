//! Byzantine agreement with external validity.
//!
//! [`EbaState`] is the reference implementation: `t + 1` parallel
//! signature-chain broadcasts with senders `P_1..P_{t+1}`, followed by a
//! deterministic choice of the lowest-indexed instance that delivered exactly
//! one valid pair. It is not adaptive; its words are metered on their own layer.

use thiserror::Error;

use crate::codec::eba_chain_message;
use crate::crypto::{share_sign, share_verify_for};
use crate::error::ProtocolError;
use crate::types::{validate, Certificate, Config, EbaPayload, Envelope, Outgoing, ProcessId, ProtocolMessage, Value};

/// Chain links are plain signatures: threshold tag 1.
pub const CHAIN_THRESHOLD: usize = 1;

/// Most distinct pairs an instance tracks; two already prove equivocation.
const MAX_ACCEPTED: usize = 2;

pub fn rounds(cfg: &Config) -> u64 {
    cfg.t as u64 + 2
}

pub fn senders(cfg: &Config) -> impl Iterator<Item = ProcessId> {
    (1..=cfg.t as u32 + 1).map(ProcessId::new)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EbaProposal {
    pub value: Value,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EbaError {
    #[error("proposal does not validate")]
    InvalidProposal,
    #[error("no broadcast instance produced a valid pair")]
    NoValidOutcome,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub type Pair = (Value, Certificate);

#[derive(Debug, Clone)]
struct Instance {
    sender: ProcessId,
    accepted: Vec<Pair>,
}

impl Instance {
    fn resolve(&self, cfg: &Config) -> Option<Pair> {
        match self.accepted.as_slice() {
            [(v, c)] if validate(*v, c, cfg) => Some((*v, c.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Default)]
pub struct EbaStep {
    pub out: Vec<Outgoing>,
    pub decision: Option<Pair>,
    /// Per-instance outputs, reported in the final round.
    pub outputs: Option<Vec<Option<Pair>>>,
}

/// Common surface for agreement implementations plugged under STRONG.
pub trait ExternalValidityAgreement {
    fn step(&mut self, round: u64, inbox: &[Envelope]) -> Result<EbaStep, EbaError>;
    fn total_rounds(&self) -> u64;
}

#[derive(Debug, Clone)]
pub struct EbaState {
    me: ProcessId,
    cfg: Config,
    proposal: Option<EbaProposal>,
    instances: Vec<Instance>,
    next_round: u64,
}

impl EbaState {
    pub fn new(p: EbaProposal, cfg: &Config, me: ProcessId) -> Result<Self, EbaError> {
        if !validate(p.value, &p.certificate, cfg) {
            return Err(EbaError::InvalidProposal);
        }
        let mut st = Self::relay_only(cfg, me)?;
        st.proposal = Some(p);
        Ok(st)
    }

    /// A participant without a proposal: relays and decides but never sends its own pair.
    pub fn relay_only(cfg: &Config, me: ProcessId) -> Result<Self, EbaError> {
        if !cfg.contains(me) {
            return Err(ProtocolError::InvalidProcess(me).into());
        }
        Ok(EbaState {
            me,
            cfg: cfg.clone(),
            proposal: None,
            instances: senders(cfg)
                .map(|sender| Instance {
                    sender,
                    accepted: Vec::new(),
                })
                .collect(),
            next_round: 1,
        })
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn is_sender(&self) -> bool {
        self.me.index() < self.instances.len()
    }

    fn accept(&mut self, round: u64, p: &EbaPayload, out: &mut Vec<Outgoing>) {
        let Some(inst) = self.instances.get_mut(p.instance.index()) else {
            return;
        };
        if inst.sender != p.instance || inst.accepted.len() >= MAX_ACCEPTED {
            return;
        }
        if inst.accepted.iter().any(|(v, c)| *v == p.value && *c == p.certificate) {
            return;
        }
        if (p.chain.len() as u64) < round - 1 || p.chain.first().map(|s| s.signer()) != Some(p.instance) {
            return;
        }
        let mut signers: Vec<ProcessId> = p.chain.iter().map(|s| s.signer()).collect();
        signers.sort();
        signers.dedup();
        if signers.len() != p.chain.len() || !signers.iter().all(|s| self.cfg.contains(*s)) {
            return;
        }
        let m = eba_chain_message(p.instance, p.value, &p.certificate);
        if !p
            .chain
            .iter()
            .all(|s| share_verify_for(s, s.signer(), CHAIN_THRESHOLD, &m))
        {
            return;
        }
        inst.accepted.push((p.value, p.certificate.clone()));

        if round <= self.cfg.t as u64 + 1 && !signers.contains(&self.me) {
            let mut chain = p.chain.clone();
            chain.push(share_sign(self.me, CHAIN_THRESHOLD, &m));
            out.push(Outgoing::broadcast(ProtocolMessage::EbaMsg(EbaPayload {
                instance: p.instance,
                value: p.value,
                certificate: p.certificate.clone(),
                chain,
            })));
        }
    }
}

impl ExternalValidityAgreement for EbaState {
    fn total_rounds(&self) -> u64 {
        rounds(&self.cfg)
    }

    fn step(&mut self, round: u64, inbox: &[Envelope]) -> Result<EbaStep, EbaError> {
        if round != self.next_round {
            return Err(ProtocolError::OrderViolation {
                expected: self.next_round,
                got: round,
            }
            .into());
        }
        if round > rounds(&self.cfg) {
            return Err(ProtocolError::Finished.into());
        }
        self.next_round += 1;

        let mut step = EbaStep::default();
        if round == 1 {
            if let (true, Some(p)) = (self.is_sender(), &self.proposal) {
                let m = eba_chain_message(self.me, p.value, &p.certificate);
                step.out.push(Outgoing::broadcast(ProtocolMessage::EbaMsg(EbaPayload {
                    instance: self.me,
                    value: p.value,
                    certificate: p.certificate.clone(),
                    chain: vec![share_sign(self.me, CHAIN_THRESHOLD, &m)],
                })));
            }
        } else {
            for e in inbox {
                if let ProtocolMessage::EbaMsg(p) = &e.msg {
                    self.accept(round, p, &mut step.out);
                }
            }
        }

        if round == rounds(&self.cfg) {
            let outputs: Vec<Option<Pair>> = self.instances.iter().map(|i| i.resolve(&self.cfg)).collect();
            let decision = outputs.iter().flatten().next().cloned();
            step.outputs = Some(outputs);
            match decision {
                Some(d) => step.decision = Some(d),
                None => return Err(EbaError::NoValidOutcome),
            }
        }
        Ok(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::combine;
    use crate::types::{any_value_message, make_config, parse_ratio, Dest};

    fn cfg() -> Config {
        make_config(2, parse_ratio("1").unwrap()).unwrap()
    }

    fn specific(c: &Config, v: u64) -> Certificate {
        let m = Value(v).scheme_message();
        let shares: Vec<_> = (1..=c.quorum() as u32)
            .map(|i| share_sign(ProcessId::new(i), c.quorum(), &m))
            .collect();
        Certificate::Specific {
            value: Value(v),
            sig: combine(c.quorum(), &shares).unwrap(),
        }
    }

    fn general(c: &Config) -> Certificate {
        let m = any_value_message();
        let shares: Vec<_> = (1..=c.quorum() as u32)
            .map(|i| share_sign(ProcessId::new(i), c.quorum(), &m))
            .collect();
        Certificate::General {
            sig: combine(c.quorum(), &shares).unwrap(),
        }
    }

    fn expand(c: &Config, round: u64, from: ProcessId, out: Vec<Outgoing>, next: &mut [Vec<Envelope>]) {
        for o in out {
            let targets: Vec<ProcessId> = match o.dest {
                Dest::To(p) => vec![p],
                Dest::All => c.processes().collect(),
            };
            for to in targets {
                next[to.index()].push(Envelope::new(round, from, to, o.msg.clone()));
            }
        }
    }

    #[test]
    fn init_paths() {
        let c = cfg();
        let st = EbaState::new(
            EbaProposal {
                value: Value(7),
                certificate: specific(&c, 7),
            },
            &c,
            ProcessId::new(1),
        )
        .unwrap();
        assert_eq!(st.instance_count(), 3);
        assert!(st.is_sender());
        let bad = EbaState::new(
            EbaProposal {
                value: Value(8),
                certificate: specific(&c, 7),
            },
            &c,
            ProcessId::new(1),
        );
        assert_eq!(bad.unwrap_err(), EbaError::InvalidProposal);
        let relay = EbaState::new(
            EbaProposal {
                value: Value(7),
                certificate: specific(&c, 7),
            },
            &c,
            ProcessId::new(7),
        )
        .unwrap();
        assert!(!relay.is_sender());
    }

    #[test]
    fn unanimous_all_correct() {
        let c = cfg();
        let cert = specific(&c, 7);
        let mut states: Vec<EbaState> = c
            .processes()
            .map(|p| {
                EbaState::new(
                    EbaProposal {
                        value: Value(7),
                        certificate: cert.clone(),
                    },
                    &c,
                    p,
                )
                .unwrap()
            })
            .collect();
        let mut inbox = vec![Vec::new(); c.n];
        let mut decisions = vec![None; c.n];
        for r in 1..=rounds(&c) {
            let mut next = vec![Vec::new(); c.n];
            for (i, st) in states.iter_mut().enumerate() {
                let step = st.step(r, &inbox[i]).unwrap();
                if let Some(d) = step.decision {
                    decisions[i] = Some(d);
                }
                expand(&c, r, ProcessId::from_index(i), step.out, &mut next);
            }
            inbox = next;
        }
        for d in decisions {
            assert_eq!(d.unwrap(), (Value(7), cert.clone()));
        }
    }

    #[test]
    fn equivocating_first_sender_falls_back_to_second() {
        let c = cfg();
        let gen = general(&c);
        let byz = ProcessId::new(1);
        let mut states: Vec<Option<EbaState>> = c
            .processes()
            .map(|p| {
                (p != byz).then(|| {
                    EbaState::new(
                        EbaProposal {
                            value: Value(5),
                            certificate: gen.clone(),
                        },
                        &c,
                        p,
                    )
                    .unwrap()
                })
            })
            .collect();
        let mut inbox = vec![Vec::new(); c.n];
        let mut decisions = Vec::new();
        for r in 1..=rounds(&c) {
            let mut next = vec![Vec::new(); c.n];
            if r == 1 {
                // P1 signs two different pairs and splits them across the others
                for (i, v) in [(2u32, 1u64), (3, 1), (4, 1), (5, 2), (6, 2), (7, 2)] {
                    let cert = specific(&c, v);
                    let m = eba_chain_message(byz, Value(v), &cert);
                    let msg = ProtocolMessage::EbaMsg(EbaPayload {
                        instance: byz,
                        value: Value(v),
                        certificate: cert,
                        chain: vec![share_sign(byz, CHAIN_THRESHOLD, &m)],
                    });
                    next[i as usize - 1].push(Envelope::new(r, byz, ProcessId::new(i), msg));
                }
            }
            for (i, st) in states.iter_mut().enumerate() {
                let Some(st) = st else { continue };
                let step = st.step(r, &inbox[i]).unwrap();
                if let Some(d) = step.decision {
                    let outs = step.outputs.unwrap();
                    assert!(outs[0].is_none());
                    decisions.push(d);
                }
                expand(&c, r, ProcessId::from_index(i), step.out, &mut next);
            }
            inbox = next;
        }
        assert_eq!(decisions.len(), 6);
        for d in decisions {
            assert_eq!(d, (Value(5), gen.clone()));
        }
    }

    #[test]
    fn short_chain_rejected() {
        let c = cfg();
        let cert = specific(&c, 7);
        let mut st = EbaState::relay_only(&c, ProcessId::new(5)).unwrap();
        st.step(1, &[]).unwrap();
        st.step(2, &[]).unwrap();
        // a chain of length 1 arriving at round 3 is too short
        let m = eba_chain_message(ProcessId::new(1), Value(7), &cert);
        let late = Envelope::new(
            2,
            ProcessId::new(1),
            ProcessId::new(5),
            ProtocolMessage::EbaMsg(EbaPayload {
                instance: ProcessId::new(1),
                value: Value(7),
                certificate: cert,
                chain: vec![share_sign(ProcessId::new(1), CHAIN_THRESHOLD, &m)],
            }),
        );
        let step = st.step(3, &[late]).unwrap();
        assert!(step.out.is_empty());
        assert_eq!(st.step(4, &[]).unwrap_err(), EbaError::NoValidOutcome);
    }
}
