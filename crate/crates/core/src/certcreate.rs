//! One leader-driven `certificate_creation` instance (five rounds).
//!
//! | round | who      | action                                                   |
//! |-------|----------|----------------------------------------------------------|
//! | 1     | everyone | `Disclose{start_value, share}` to the leader             |
//! | 2     | leader   | positive certificate, or partition and `PartitionReq`    |
//! | 3     | everyone | sign every description not containing `start_value`      |
//! | 4     | leader   | assemble and broadcast the negative certificate          |
//! | 5     | everyone | return the leader's certificate if it validates          |

use std::collections::BTreeMap;

use crate::crypto::{combine, share_sign, share_verify_for, Share};
use crate::error::ProtocolError;
use crate::partition::{construct_negative_certificate, partition, Disclosure, GroupLayout};
use crate::types::{
    validate, Certificate, Config, Envelope, Interval, Outgoing, ProcessId, ProtocolMessage, Value, DEFAULT_VALUE,
    MAX_GROUPS,
};

pub type CcOutput = Option<(Value, Certificate)>;

#[derive(Debug, Clone)]
pub struct CcState {
    me: ProcessId,
    leader: ProcessId,
    start_value: Value,
    cfg: Config,
    certificate_acquired: bool,
    groups: Option<GroupLayout>,
    received: Vec<(Value, Certificate)>,
    next_round: u8,
}

#[derive(Debug, Default)]
pub struct CcStep {
    pub out: Vec<Outgoing>,
    /// Set in round 5: `Some((v, cert))`, or `None` for `(⊥, ⊥)`.
    pub result: Option<CcOutput>,
}

impl CcState {
    pub fn new(start_value: Value, leader: ProcessId, me: ProcessId, cfg: &Config) -> Result<Self, ProtocolError> {
        for p in [leader, me] {
            if !cfg.contains(p) {
                return Err(ProtocolError::InvalidProcess(p));
            }
        }
        Ok(CcState {
            me,
            leader,
            start_value,
            cfg: cfg.clone(),
            certificate_acquired: false,
            groups: None,
            received: Vec::new(),
            next_round: 1,
        })
    }

    pub fn is_leader(&self) -> bool {
        self.me == self.leader
    }

    pub fn leader(&self) -> ProcessId {
        self.leader
    }

    pub fn certificate_acquired(&self) -> bool {
        self.certificate_acquired
    }

    pub fn groups(&self) -> Option<&GroupLayout> {
        self.groups.as_ref()
    }

    /// Runs round `round` given the messages delivered at the end of the previous round.
    pub fn step(&mut self, round: u8, inbox: &[Envelope]) -> Result<CcStep, ProtocolError> {
        if round != self.next_round {
            return Err(ProtocolError::OrderViolation {
                expected: self.next_round as u64,
                got: round as u64,
            });
        }
        self.next_round += 1;

        if round >= 3 {
            self.collect_certificates(inbox);
        }
        let mut step = CcStep::default();
        match round {
            1 => {
                let share = share_sign(self.me, self.cfg.quorum(), &self.start_value.scheme_message());
                step.out.push(Outgoing::to(
                    self.leader,
                    ProtocolMessage::Disclose {
                        value: self.start_value,
                        share,
                    },
                ));
            }
            2 if self.is_leader() => self.leader_collect(inbox, &mut step.out),
            3 => self.sign_partition(inbox, &mut step.out),
            4 if self.is_leader() && !self.certificate_acquired => self.leader_assemble(inbox, &mut step.out),
            5 => {
                let cfg = &self.cfg;
                let result = self.received.iter().find(|(v, c)| validate(*v, c, cfg)).cloned();
                step.result = Some(result);
            }
            2 | 4 => {}
            _ => return Err(ProtocolError::Finished),
        }
        Ok(step)
    }

    fn collect_certificates(&mut self, inbox: &[Envelope]) {
        for e in inbox.iter().filter(|e| e.from == self.leader) {
            if let ProtocolMessage::CertificateMsg { value, certificate } = &e.msg {
                self.received.push((*value, certificate.clone()));
            }
        }
    }

    fn leader_collect(&mut self, inbox: &[Envelope], out: &mut Vec<Outgoing>) {
        let k = self.cfg.quorum();
        let mut discloses: BTreeMap<ProcessId, (Value, &Share)> = BTreeMap::new();
        for e in inbox {
            if let ProtocolMessage::Disclose { value, share } = &e.msg {
                if share_verify_for(share, e.from, k, &value.scheme_message()) {
                    discloses.entry(e.from).or_insert((*value, share));
                }
            }
        }

        let mut by_value: BTreeMap<Value, Vec<&Share>> = BTreeMap::new();
        for (value, share) in discloses.values() {
            by_value.entry(*value).or_default().push(share);
        }
        if let Some((value, shares)) = by_value.iter().find(|(_, s)| s.len() >= k) {
            // shares are in ascending signer order
            if let Ok(sig) = combine(k, shares[..k].iter().copied()) {
                self.certificate_acquired = true;
                out.push(Outgoing::broadcast(ProtocolMessage::CertificateMsg {
                    value: *value,
                    certificate: Certificate::Specific { value: *value, sig },
                }));
                return;
            }
        }

        if discloses.len() >= self.cfg.optimistic_quorum() {
            let list: Vec<Disclosure> = discloses
                .iter()
                .map(|(p, (v, s))| Disclosure {
                    from: *p,
                    value: *v,
                    share: (*s).clone(),
                })
                .collect();
            if let Ok(layout) = partition(&list, &self.cfg) {
                out.push(Outgoing::broadcast(ProtocolMessage::PartitionReq {
                    descriptions: layout.descriptions.clone(),
                }));
                self.groups = Some(layout);
            }
        }
    }

    fn sign_partition(&self, inbox: &[Envelope], out: &mut Vec<Outgoing>) {
        let req = inbox.iter().find_map(|e| match &e.msg {
            ProtocolMessage::PartitionReq { descriptions } if e.from == self.leader => Some(descriptions),
            _ => None,
        });
        let Some(descriptions) = req else { return };
        if descriptions.is_empty() || descriptions.len() > MAX_GROUPS {
            return;
        }
        let mut negatives: Vec<(Interval, Share)> = Vec::new();
        for d in descriptions {
            if d.is_well_formed() && !d.contains(self.start_value) && !negatives.iter().any(|(x, _)| x == d) {
                negatives.push((*d, share_sign(self.me, self.cfg.quorum(), &d.scheme_message())));
            }
        }
        out.push(Outgoing::to(self.leader, ProtocolMessage::PartitionReply { negatives }));
    }

    fn leader_assemble(&mut self, inbox: &[Envelope], out: &mut Vec<Outgoing>) {
        let Some(layout) = &self.groups else { return };
        let replies: Vec<(ProcessId, Interval, Share)> = inbox
            .iter()
            .filter_map(|e| match &e.msg {
                ProtocolMessage::PartitionReply { negatives } => Some((e.from, negatives)),
                _ => None,
            })
            .flat_map(|(from, negs)| negs.iter().map(move |(d, s)| (from, *d, s.clone())))
            .collect();
        if let Some(cert) = construct_negative_certificate(layout, &replies, &self.cfg) {
            self.certificate_acquired = true;
            out.push(Outgoing::broadcast(ProtocolMessage::CertificateMsg {
                value: DEFAULT_VALUE,
                certificate: cert,
            }));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_config, CertificateKind, Dest};
    use num_rational::Ratio;

    /// Runs one instance with every process correct; returns each process's result.
    fn run_all_correct(values: &[u64], leader: u32, silent_leader: bool) -> Vec<CcOutput> {
        let cfg = make_config(2, Ratio::from_integer(1)).unwrap();
        let leader = ProcessId::new(leader);
        let mut states: Vec<CcState> = cfg
            .processes()
            .map(|p| CcState::new(Value(values[p.index()]), leader, p, &cfg).unwrap())
            .collect();
        let mut inbox: Vec<Vec<Envelope>> = vec![Vec::new(); cfg.n];
        let mut results = vec![None; cfg.n];
        for round in 1..=5u8 {
            let mut next: Vec<Vec<Envelope>> = vec![Vec::new(); cfg.n];
            for (i, st) in states.iter_mut().enumerate() {
                let from = ProcessId::from_index(i);
                let step = st.step(round, &inbox[i]).unwrap();
                if let Some(r) = step.result {
                    results[i] = Some(r);
                }
                if silent_leader && from == leader {
                    continue;
                }
                for o in step.out {
                    let targets: Vec<ProcessId> = match o.dest {
                        Dest::To(p) => vec![p],
                        Dest::All => cfg.processes().collect(),
                    };
                    for to in targets {
                        next[to.index()].push(Envelope::new(round as u64, from, to, o.msg.clone()));
                    }
                }
            }
            inbox = next;
        }
        results.into_iter().map(Option::unwrap).collect()
    }

    #[test]
    fn unanimous_positive_branch() {
        let results = run_all_correct(&[9; 7], 1, false);
        for r in results {
            let (v, c) = r.unwrap();
            assert_eq!(v, Value(9));
            assert_eq!(c.kind(), CertificateKind::Specific);
        }
    }

    #[test]
    fn distinct_values_negative_branch() {
        let results = run_all_correct(&[1, 2, 3, 4, 5, 6, 7], 3, false);
        for r in results {
            let (v, c) = r.unwrap();
            assert_eq!(v, DEFAULT_VALUE);
            assert_eq!(c.kind(), CertificateKind::Negative);
        }
    }

    #[test]
    fn silent_leader_yields_bottom() {
        let results = run_all_correct(&[1, 2, 3, 4, 5, 6, 7], 2, true);
        assert!(results.iter().all(Option::is_none));
    }

    #[test]
    fn init_and_order() {
        let cfg = make_config(2, Ratio::from_integer(1)).unwrap();
        let st = CcState::new(Value(7), ProcessId::new(1), ProcessId::new(3), &cfg).unwrap();
        assert!(!st.certificate_acquired());
        assert!(!st.is_leader());
        let st = CcState::new(Value(7), ProcessId::new(3), ProcessId::new(3), &cfg).unwrap();
        assert!(st.is_leader());
        assert_eq!(
            CcState::new(Value(7), ProcessId::new(0), ProcessId::new(3), &cfg).unwrap_err(),
            ProtocolError::InvalidProcess(ProcessId::new(0))
        );
        let mut st = CcState::new(Value(7), ProcessId::new(1), ProcessId::new(3), &cfg).unwrap();
        assert!(matches!(st.step(2, &[]), Err(ProtocolError::OrderViolation { .. })));
        st.step(1, &[]).unwrap();
        assert!(matches!(st.step(1, &[]), Err(ProtocolError::OrderViolation { .. })));
    }
}
