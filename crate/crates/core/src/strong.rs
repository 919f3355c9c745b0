//! STRONG: BUCKET certification, four agreement rounds, then EBA.
//!
//! Agreement rounds (after BUCKET stops):
//! 1. without a certificate, broadcast `HelpReq`;
//! 2. answer every `HelpReq` with `(forward value, certificate, share of own proposal)`;
//! 3. without a certificate: adopt a valid certificate from a reply, or combine
//!    `t + 1` proposal shares for one value, or broadcast `AllowAny`;
//! 4. without a certificate: adopt a `FinalCertificate`, or combine `AllowAny`
//!    shares into a general certificate. Then propose to EBA.
//!
//! Round-3 matching groups replies by the value signed inside each proposal
//! share, since only those shares can be combined. A process that adopts a
//! certificate from a reply in round 3 re-broadcasts it as a
//! `FinalCertificate`, like a process that combined one; otherwise a correct
//! process could be left without a certificate and without an `AllowAny` quorum.

use std::collections::{BTreeMap, BTreeSet};

use crate::bucket::{self, BucketEvent, BucketState};
use crate::crypto::{combine, share_sign, share_verify_for, Share};
use crate::eba::{self, EbaError, EbaProposal, EbaState, ExternalValidityAgreement, Pair};
use crate::error::ProtocolError;
use crate::report::{Violation, ViolationKind};
use crate::types::{
    any_value_message, validate, Certificate, Config, Envelope, Outgoing, ProcessId, ProtocolMessage, Value,
};

pub const AGREEMENT_ROUNDS: u64 = 4;

/// Rounds before the first EBA round: `(t_o + 1) * 6 + 4`.
pub fn pre_eba_rounds(cfg: &Config) -> u64 {
    bucket::total_rounds(cfg) + AGREEMENT_ROUNDS
}

/// Global round at which every correct process decides.
pub fn total_rounds(cfg: &Config) -> u64 {
    pre_eba_rounds(cfg) + eba::rounds(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Certification,
    Agreement(u8),
    Eba(u64),
    Decided,
}

/// Which phase a global round belongs to.
pub fn phase_of(cfg: &Config, global_round: u64) -> Phase {
    let b = bucket::total_rounds(cfg);
    if global_round <= b {
        Phase::Certification
    } else if global_round <= b + AGREEMENT_ROUNDS {
        Phase::Agreement((global_round - b) as u8)
    } else if global_round <= total_rounds(cfg) {
        Phase::Eba(global_round - b - AGREEMENT_ROUNDS)
    } else {
        Phase::Decided
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrongEvent {
    Bucket(BucketEvent),
    Propose(Pair),
    Decide(Value),
    EbaOutputs(Vec<Option<Pair>>),
    Violation(Violation),
}

#[derive(Debug, Default)]
pub struct StrongStep {
    pub out: Vec<Outgoing>,
    pub events: Vec<StrongEvent>,
}

#[derive(Debug, Clone)]
pub struct StrongState {
    me: ProcessId,
    cfg: Config,
    proposal: Value,
    proposal_to_forward: Option<Value>,
    certificate: Option<Certificate>,
    certificate_acquired: bool,
    bucket: BucketState,
    eba: Option<EbaState>,
    decided: Option<Value>,
    next_round: u64,
}

impl StrongState {
    pub fn new(proposal: Value, cfg: &Config, me: ProcessId) -> Result<Self, ProtocolError> {
        Ok(StrongState {
            me,
            cfg: cfg.clone(),
            proposal,
            proposal_to_forward: None,
            certificate: None,
            certificate_acquired: false,
            bucket: BucketState::new(proposal, cfg, me)?,
            eba: None,
            decided: None,
            next_round: 1,
        })
    }

    pub fn phase(&self) -> Phase {
        if self.decided.is_some() {
            Phase::Decided
        } else {
            phase_of(&self.cfg, self.next_round)
        }
    }

    pub fn decided(&self) -> Option<Value> {
        self.decided
    }

    pub fn certificate(&self) -> Option<(Option<Value>, &Certificate)> {
        self.certificate.as_ref().map(|c| (self.proposal_to_forward, c))
    }

    pub fn bucket(&self) -> &BucketState {
        &self.bucket
    }

    pub fn step(&mut self, global_round: u64, inbox: &[Envelope]) -> Result<StrongStep, ProtocolError> {
        if global_round != self.next_round {
            return Err(ProtocolError::OrderViolation {
                expected: self.next_round,
                got: global_round,
            });
        }
        let mut step = StrongStep::default();
        match phase_of(&self.cfg, global_round) {
            Phase::Certification => {
                let b = self.bucket.step(global_round, inbox)?;
                step.out = b.out;
                for ev in b.events {
                    if ev == BucketEvent::Stop {
                        if let Some((v, c)) = self.bucket.acquired() {
                            self.proposal_to_forward = Some(v);
                            self.certificate = Some(c.clone());
                            self.certificate_acquired = true;
                        }
                    }
                    step.events.push(StrongEvent::Bucket(ev));
                }
            }
            Phase::Agreement(1) => {
                if !self.certificate_acquired {
                    step.out.push(Outgoing::broadcast(ProtocolMessage::HelpReq));
                }
            }
            Phase::Agreement(2) => self.help_replies(inbox, &mut step),
            Phase::Agreement(3) => {
                if !self.certificate_acquired {
                    self.round_three(inbox, &mut step);
                }
            }
            Phase::Agreement(_) => self.round_four(global_round, inbox, &mut step),
            Phase::Eba(r) => self.eba_step(global_round, r, inbox, &mut step)?,
            Phase::Decided => return Err(ProtocolError::Finished),
        }
        self.next_round += 1;
        Ok(step)
    }

    fn help_replies(&self, inbox: &[Envelope], step: &mut StrongStep) {
        let requesters: BTreeSet<ProcessId> = inbox
            .iter()
            .filter(|e| matches!(e.msg, ProtocolMessage::HelpReq))
            .map(|e| e.from)
            .collect();
        if requesters.is_empty() {
            return;
        }
        let share = share_sign(self.me, self.cfg.quorum(), &self.proposal.scheme_message());
        for p in requesters {
            step.out.push(Outgoing::to(
                p,
                ProtocolMessage::HelpReply {
                    forward_value: self.proposal_to_forward,
                    certificate: self.certificate.clone(),
                    proposal_share: share.clone(),
                },
            ));
        }
    }

    fn adopt(&mut self, v: Value, c: Certificate) {
        self.proposal_to_forward = Some(v);
        self.certificate = Some(c);
        self.certificate_acquired = true;
    }

    fn round_three(&mut self, inbox: &[Envelope], step: &mut StrongStep) {
        let cfg = &self.cfg;
        let k = cfg.quorum();

        let relayed = inbox.iter().find_map(|e| match &e.msg {
            ProtocolMessage::HelpReply {
                forward_value: Some(v),
                certificate: Some(c),
                ..
            } if validate(*v, c, cfg) => Some((*v, c.clone())),
            _ => None,
        });
        if let Some((v, c)) = relayed {
            step.out.push(Outgoing::broadcast(ProtocolMessage::FinalCertificate {
                value: v,
                certificate: c.clone(),
            }));
            self.adopt(v, c);
            return;
        }

        let mut by_value: BTreeMap<Value, BTreeMap<ProcessId, &Share>> = BTreeMap::new();
        for e in inbox {
            if let ProtocolMessage::HelpReply { proposal_share, .. } = &e.msg {
                let Some(v) = Value::from_scheme_message(proposal_share.message()) else {
                    continue;
                };
                if share_verify_for(proposal_share, e.from, k, &v.scheme_message()) {
                    by_value.entry(v).or_default().entry(e.from).or_insert(proposal_share);
                }
            }
        }
        let combined = by_value.iter().find_map(|(v, shares)| {
            (shares.len() >= k)
                .then(|| combine(k, shares.values().take(k).copied()).ok())
                .flatten()
                .map(|sig| (*v, sig))
        });
        if let Some((v, sig)) = combined {
            let cert = Certificate::Specific { value: v, sig };
            step.out.push(Outgoing::broadcast(ProtocolMessage::FinalCertificate {
                value: v,
                certificate: cert.clone(),
            }));
            self.adopt(v, cert);
            return;
        }

        step.out.push(Outgoing::broadcast(ProtocolMessage::AllowAny {
            share: share_sign(self.me, k, &any_value_message()),
        }));
    }

    fn round_four(&mut self, global_round: u64, inbox: &[Envelope], step: &mut StrongStep) {
        if !self.certificate_acquired {
            let cfg = &self.cfg;
            let fin = inbox.iter().find_map(|e| match &e.msg {
                ProtocolMessage::FinalCertificate { value, certificate } if validate(*value, certificate, cfg) => {
                    Some((*value, certificate.clone()))
                }
                _ => None,
            });
            if let Some((v, c)) = fin {
                self.adopt(v, c);
            } else {
                let k = cfg.quorum();
                let tag = any_value_message();
                let shares: BTreeMap<ProcessId, &Share> = inbox
                    .iter()
                    .filter_map(|e| match &e.msg {
                        ProtocolMessage::AllowAny { share } if share_verify_for(share, e.from, k, &tag) => {
                            Some((e.from, share))
                        }
                        _ => None,
                    })
                    .collect();
                if shares.len() >= k {
                    if let Ok(sig) = combine(k, shares.values().take(k).copied()) {
                        self.proposal_to_forward = Some(self.proposal);
                        self.certificate = Some(Certificate::General { sig });
                        self.certificate_acquired = true;
                    }
                }
                if !self.certificate_acquired {
                    step.events.push(StrongEvent::Violation(
                        Violation::new(
                            ViolationKind::MissingAllowAnyQuorum,
                            format!("{} allow-any shares, need {k}", shares.len()),
                        )
                        .at(global_round, self.me),
                    ));
                }
            }
        }

        let pair = match (self.proposal_to_forward, &self.certificate) {
            (Some(v), Some(c)) => Some((v, c.clone())),
            _ => None,
        };
        self.eba = Some(match pair {
            Some((value, certificate)) => {
                step.events.push(StrongEvent::Propose((value, certificate.clone())));
                EbaState::new(EbaProposal { value, certificate }, &self.cfg, self.me).unwrap_or_else(|_| {
                    step.events.push(StrongEvent::Violation(
                        Violation::new(ViolationKind::InvalidProposal, "held pair fails validate")
                            .at(global_round, self.me),
                    ));
                    EbaState::relay_only(&self.cfg, self.me).expect("process id checked at construction")
                })
            }
            None => EbaState::relay_only(&self.cfg, self.me).expect("process id checked at construction"),
        });
    }

    fn eba_step(
        &mut self,
        global_round: u64,
        eba_round: u64,
        inbox: &[Envelope],
        step: &mut StrongStep,
    ) -> Result<(), ProtocolError> {
        let eba = self.eba.as_mut().ok_or(ProtocolError::OrderViolation {
            expected: pre_eba_rounds(&self.cfg),
            got: global_round,
        })?;
        match eba.step(eba_round, inbox) {
            Ok(e) => {
                step.out = e.out;
                if let Some(outputs) = e.outputs {
                    step.events.push(StrongEvent::EbaOutputs(outputs));
                }
                if let Some((v, _)) = e.decision {
                    self.decided = Some(v);
                    step.events.push(StrongEvent::Decide(v));
                }
            }
            Err(EbaError::Protocol(p)) => return Err(p),
            Err(err) => {
                let kind = match err {
                    EbaError::InvalidProposal => ViolationKind::InvalidProposal,
                    _ => ViolationKind::NoValidOutcome,
                };
                step.events.push(StrongEvent::Violation(
                    Violation::new(kind, err.to_string()).at(global_round, self.me),
                ));
                self.decided = None;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_config, parse_ratio};

    #[test]
    fn schedule() {
        let c = make_config(2, parse_ratio("1").unwrap()).unwrap();
        assert_eq!(pre_eba_rounds(&c), 22);
        assert_eq!(total_rounds(&c), 26);
        assert_eq!(phase_of(&c, 18), Phase::Certification);
        assert_eq!(phase_of(&c, 19), Phase::Agreement(1));
        assert_eq!(phase_of(&c, 22), Phase::Agreement(4));
        assert_eq!(phase_of(&c, 23), Phase::Eba(1));
        assert_eq!(phase_of(&c, 26), Phase::Eba(4));
        assert_eq!(phase_of(&c, 27), Phase::Decided);
    }

    #[test]
    fn init() {
        let c = make_config(2, parse_ratio("1").unwrap()).unwrap();
        let st = StrongState::new(Value(7), &c, ProcessId::new(1)).unwrap();
        assert_eq!(st.phase(), Phase::Certification);
        assert_eq!(st.decided(), None);
        assert!(st.certificate().is_none());
    }
}
