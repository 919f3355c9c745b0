//! BUCKET: `t_o + 1` leader-rotating iterations of six rounds each.
//!
//! Iteration `j` is led by `P_j`. Round 1 sends `AidReq` (broadcast by a
//! certificate-less leader, unicast to the leader by everyone else without a
//! certificate). Round 2 either starts `certificate_creation` (on the leader's
//! `AidReq`) or, at a certified leader, answers every `AidReq` with the
//! leader's certificate. Creation round `r` runs in iteration round `r + 1`,
//! so its result is harvested in round 6.

use std::collections::BTreeSet;

use crate::certcreate::CcState;
use crate::error::ProtocolError;
use crate::types::{validate, Certificate, Config, Envelope, Outgoing, ProcessId, ProtocolMessage, Value};

pub const ROUNDS_PER_ITERATION: u64 = 6;

pub fn iterations(cfg: &Config) -> u64 {
    cfg.t_o as u64 + 1
}

pub fn total_rounds(cfg: &Config) -> u64 {
    iterations(cfg) * ROUNDS_PER_ITERATION
}

pub fn leader_of(iteration: u64) -> ProcessId {
    ProcessId::new(iteration as u32)
}

/// Maps a global round (1-based) to `(iteration, round within iteration)`.
pub fn position(global_round: u64) -> (u64, u64) {
    (
        (global_round - 1) / ROUNDS_PER_ITERATION + 1,
        (global_round - 1) % ROUNDS_PER_ITERATION + 1,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BucketEvent {
    Acquire {
        value: Value,
        certificate: Certificate,
        iteration: u64,
    },
    Stop,
}

#[derive(Debug, Default)]
pub struct BucketStep {
    pub out: Vec<Outgoing>,
    pub events: Vec<BucketEvent>,
}

#[derive(Debug, Clone)]
pub struct BucketState {
    me: ProcessId,
    cfg: Config,
    start_value: Value,
    certified_value: Option<Value>,
    certificate: Option<Certificate>,
    certificate_acquired: bool,
    started_creation: bool,
    cc: Option<CcState>,
    next_round: u64,
}

impl BucketState {
    pub fn new(proposal: Value, cfg: &Config, me: ProcessId) -> Result<Self, ProtocolError> {
        if !cfg.contains(me) {
            return Err(ProtocolError::InvalidProcess(me));
        }
        Ok(BucketState {
            me,
            cfg: cfg.clone(),
            start_value: proposal,
            certified_value: None,
            certificate: None,
            certificate_acquired: false,
            started_creation: false,
            cc: None,
            next_round: 1,
        })
    }

    pub fn iteration(&self) -> u64 {
        position(self.next_round).0
    }

    pub fn certificate_acquired(&self) -> bool {
        self.certificate_acquired
    }

    /// The acquired pair, if any. Negative certificates are paired with the default value.
    pub fn acquired(&self) -> Option<(Value, &Certificate)> {
        if !self.certificate_acquired {
            return None;
        }
        Some((self.certified_value?, self.certificate.as_ref()?))
    }

    pub fn is_stopped(&self) -> bool {
        self.next_round > total_rounds(&self.cfg)
    }

    pub fn step(&mut self, global_round: u64, inbox: &[Envelope]) -> Result<BucketStep, ProtocolError> {
        if global_round != self.next_round {
            return Err(ProtocolError::OrderViolation {
                expected: self.next_round,
                got: global_round,
            });
        }
        if self.is_stopped() {
            return Err(ProtocolError::Finished);
        }
        self.next_round += 1;

        let (iteration, round) = position(global_round);
        let leader = leader_of(iteration);
        let mut step = BucketStep::default();

        match round {
            1 => {
                self.started_creation = false;
                self.cc = None;
                if !self.certificate_acquired {
                    if self.me == leader {
                        step.out.push(Outgoing::broadcast(ProtocolMessage::AidReq));
                    } else {
                        step.out.push(Outgoing::to(leader, ProtocolMessage::AidReq));
                    }
                }
            }
            2 => {
                let requesters: BTreeSet<ProcessId> = inbox
                    .iter()
                    .filter(|e| matches!(e.msg, ProtocolMessage::AidReq))
                    .map(|e| e.from)
                    .collect();
                if requesters.contains(&leader) {
                    self.started_creation = true;
                    let mut cc = CcState::new(self.start_value, leader, self.me, &self.cfg)?;
                    step.out.extend(cc.step(1, inbox)?.out);
                    self.cc = Some(cc);
                } else if self.me == leader && self.certificate_acquired {
                    for k in requesters {
                        step.out.push(Outgoing::to(
                            k,
                            ProtocolMessage::AidReply {
                                value: self.certified_value,
                                certificate: self.certificate.clone(),
                            },
                        ));
                    }
                }
            }
            3..=6 => {
                if round == 3 && !self.started_creation && !self.certificate_acquired {
                    self.adopt_aid_reply(leader, inbox);
                }
                if let Some(cc) = self.cc.as_mut() {
                    let cc_step = cc.step((round - 1) as u8, inbox)?;
                    step.out.extend(cc_step.out);
                    if let Some(Some((value, cert))) = cc_step.result {
                        if !self.certificate_acquired {
                            self.certified_value = Some(value);
                            self.certificate = Some(cert);
                        }
                    }
                }
                if round == 6 {
                    self.cc = None;
                    if !self.certificate_acquired {
                        if let (Some(value), Some(cert)) = (self.certified_value, &self.certificate) {
                            self.certificate_acquired = true;
                            step.events.push(BucketEvent::Acquire {
                                value,
                                certificate: cert.clone(),
                                iteration,
                            });
                        }
                    }
                    if iteration == iterations(&self.cfg) {
                        step.events.push(BucketEvent::Stop);
                    }
                }
            }
            _ => unreachable!("round within iteration is 1..=6"),
        }
        Ok(step)
    }

    fn adopt_aid_reply(&mut self, leader: ProcessId, inbox: &[Envelope]) {
        let cfg = &self.cfg;
        let reply = inbox.iter().filter(|e| e.from == leader).find_map(|e| match &e.msg {
            ProtocolMessage::AidReply {
                value: Some(v),
                certificate: Some(c),
            } if validate(*v, c, cfg) => Some((*v, c.clone())),
            _ => None,
        });
        if let Some((v, c)) = reply {
            self.certified_value = Some(v);
            self.certificate = Some(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_config, parse_ratio};

    #[test]
    fn schedule_lengths() {
        let c = make_config(2, parse_ratio("1").unwrap()).unwrap();
        assert_eq!(total_rounds(&c), 18);
        let c = make_config(8, parse_ratio("1").unwrap()).unwrap();
        assert_eq!(total_rounds(&c), 54);
        assert_eq!(position(1), (1, 1));
        assert_eq!(position(6), (1, 6));
        assert_eq!(position(7), (2, 1));
    }

    #[test]
    fn init() {
        let c = make_config(2, parse_ratio("1").unwrap()).unwrap();
        let st = BucketState::new(Value(5), &c, ProcessId::new(2)).unwrap();
        assert_eq!(st.iteration(), 1);
        assert!(!st.certificate_acquired());
        assert!(BucketState::new(Value(5), &c, ProcessId::new(8)).is_err());
    }

    #[test]
    fn lone_process_requests_aid_and_stops() {
        let c = make_config(1, parse_ratio("1").unwrap()).unwrap();
        let mut st = BucketState::new(Value(5), &c, ProcessId::new(3)).unwrap();
        let first = st.step(1, &[]).unwrap();
        assert_eq!(
            first.out,
            vec![Outgoing::to(ProcessId::new(1), ProtocolMessage::AidReq)]
        );
        let mut stops = 0;
        for r in 2..=total_rounds(&c) {
            stops += st
                .step(r, &[])
                .unwrap()
                .events
                .iter()
                .filter(|e| **e == BucketEvent::Stop)
                .count();
        }
        assert_eq!(stops, 1);
        assert!(st.is_stopped());
        assert_eq!(st.step(total_rounds(&c) + 1, &[]).unwrap_err(), ProtocolError::Finished);
    }
}
