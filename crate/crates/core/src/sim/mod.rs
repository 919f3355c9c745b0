//! Deterministic synchronous-round simulation of a scenario.
//!
//! Round `r`: every correct process steps on the messages sent to it in round
//! `r - 1`; the adversary then sees those outputs and picks the Byzantine
//! messages of round `r`; everything is delivered at the end of the round.
//! Only messages sent by correct processes are metered.

pub mod adversary;
pub mod checks;
pub mod machine;
pub mod scenario;

use std::collections::BTreeMap;
use std::io::{self, Write};

use sha2::{Digest, Sha256};

use crate::bucket::{self, BucketEvent};
use crate::codec::Encode;
use crate::eba::Pair;
use crate::report::{AcquireRecord, IterationRecord, LayerWords, ProcessRecord, Report, Violation, ViolationKind};
use crate::strong::StrongEvent;
use crate::types::{validate, word_cost, Dest, Envelope, Layer, ProcessId, Value};

use adversary::{AdversaryView, ByzantineSigner};
use checks::{CertificateRegistry, RegistryContext, ShareLedger};
use machine::Machine;
pub use scenario::{
    ByzantineSpec, ProposalSpec, Protocol, Scenario, ScenarioError, ScenarioFile, Strategy, STRATEGY_NAMES,
};

/// Runs `s` to completion.
pub fn run(s: &Scenario) -> Report {
    Runner::new(s).run(None).expect("no trace sink, no io error")
}

/// Runs `s` and writes every delivered message to `trace` as one JSON object per line.
pub fn run_traced(s: &Scenario, trace: &mut dyn Write) -> io::Result<Report> {
    Runner::new(s).run(Some(trace))
}

fn pair_digest(p: &Pair) -> String {
    let mut b = Vec::new();
    p.0.encode_to(&mut b);
    p.1.encode_to(&mut b);
    hex::encode(crate::crypto::sha256(&[b"sba-lab/pair", &b]))
}

struct Runner<'a> {
    s: &'a Scenario,
    byz: Vec<bool>,
    correct: Vec<ProcessId>,
    machines: Vec<Option<Machine>>,
    records: BTreeMap<ProcessId, ProcessRecord>,
    eba_pairs: BTreeMap<ProcessId, Vec<Option<Pair>>>,
    bucket_round_words: Vec<u64>,
    words: LayerWords,
    ledger: ShareLedger,
    registry: CertificateRegistry,
    violations: Vec<Violation>,
}

impl<'a> Runner<'a> {
    fn new(s: &'a Scenario) -> Self {
        let cfg = &s.cfg;
        let byz: Vec<bool> = cfg.processes().map(|p| s.is_byzantine(p)).collect();
        let correct = s.correct();
        let machines = cfg
            .processes()
            .map(|p| {
                (!byz[p.index()]).then(|| {
                    Machine::new(s.protocol, s.proposals[p.index()], cfg, p).expect("scenario ids are in range")
                })
            })
            .collect();
        let records = correct
            .iter()
            .map(|&p| {
                (
                    p,
                    ProcessRecord {
                        id: p,
                        proposal: s.proposals[p.index()],
                        decision: None,
                        decision_round: None,
                        decision_certificate: None,
                        acquire: None,
                        stop_round: None,
                        words: LayerWords::default(),
                        eba_outputs: None,
                    },
                )
            })
            .collect();
        Runner {
            s,
            byz,
            correct,
            machines,
            records,
            eba_pairs: BTreeMap::new(),
            bucket_round_words: Vec::new(),
            words: LayerWords::default(),
            ledger: ShareLedger::default(),
            registry: CertificateRegistry::default(),
            violations: Vec::new(),
        }
    }

    fn is_correct(&self, p: ProcessId) -> bool {
        self.s.cfg.contains(p) && !self.byz[p.index()]
    }

    fn note_certificates(&mut self, msg: &crate::types::ProtocolMessage) {
        let ctx = RegistryContext {
            cfg: &self.s.cfg,
            ledger: &self.ledger,
            faults: self.s.byzantine.len(),
            unanimous: self.s.unanimous_value(),
        };
        for (v, c) in msg.certificates() {
            self.registry.note(v, c, &ctx, &mut self.violations);
        }
    }

    fn handle_event(&mut self, round: u64, p: ProcessId, ev: StrongEvent) {
        let rec = self.records.get_mut(&p).expect("correct process");
        match ev {
            StrongEvent::Bucket(BucketEvent::Acquire {
                value,
                certificate,
                iteration,
            }) => {
                rec.acquire = Some(AcquireRecord {
                    iteration,
                    round,
                    value,
                    kind: certificate.kind(),
                });
            }
            StrongEvent::Bucket(BucketEvent::Stop) => rec.stop_round = Some(round),
            StrongEvent::Decide(v) => {
                if rec.decision.is_some() {
                    self.violations
                        .push(Violation::new(ViolationKind::Agreement, "decided twice").at(round, p));
                }
                rec.decision = Some(v);
                rec.decision_round = Some(round);
            }
            StrongEvent::EbaOutputs(outs) => {
                rec.eba_outputs = Some(outs.iter().map(|o| o.as_ref().map(pair_digest)).collect());
                rec.decision_certificate = outs.iter().flatten().next().map(|(_, c)| c.clone());
                self.eba_pairs.insert(p, outs);
            }
            StrongEvent::Violation(v) => self.violations.push(v),
            StrongEvent::Propose(_) => {}
        }
    }

    fn run(mut self, mut trace: Option<&mut dyn Write>) -> io::Result<Report> {
        let s = self.s;
        let cfg = &s.cfg;
        let n = cfg.n;
        let total = machine::total_rounds(s.protocol, cfg);
        self.bucket_round_words = vec![0; total as usize + 1];

        let mut adversary = adversary::build(s);
        let signer = ByzantineSigner::new(s.byzantine.clone());
        let mut inboxes: Vec<Vec<Envelope>> = vec![Vec::new(); n];
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();

        for r in 1..=total {
            let mut correct_out: Vec<Envelope> = Vec::new();
            for i in 0..self.correct.len() {
                let p = self.correct[i];
                let inbox = std::mem::take(&mut inboxes[p.index()]);
                let Some(m) = self.machines[p.index()].as_mut() else {
                    continue;
                };
                let (out, events) = match m.step(r, &inbox) {
                    Ok(x) => x,
                    Err(e) => {
                        self.violations
                            .push(Violation::new(ViolationKind::ProtocolOrder, e.to_string()).at(r, p));
                        continue;
                    }
                };
                for ev in events {
                    self.handle_event(r, p, ev);
                }
                for o in out {
                    let byz = &self.byz;
                    self.ledger.note_correct(&o.msg, |q| !byz[q.index()]);
                    self.note_certificates(&o.msg);
                    let copies = match o.dest {
                        Dest::To(_) => 1,
                        Dest::All => n as u64,
                    };
                    let w = word_cost(&o.msg) * copies;
                    let layer = o.msg.layer();
                    self.words.add(layer, w);
                    self.records.get_mut(&p).expect("correct").words.add(layer, w);
                    if layer == Layer::Bucket {
                        self.bucket_round_words[r as usize] += w;
                    }
                    match o.dest {
                        Dest::To(q) => correct_out.push(Envelope::new(r, p, q, o.msg)),
                        Dest::All => {
                            for q in cfg.processes() {
                                correct_out.push(Envelope::new(r, p, q, o.msg.clone()));
                            }
                        }
                    }
                }
            }

            let byz_inbox: Vec<Envelope> = s
                .byzantine
                .iter()
                .flat_map(|b| std::mem::take(&mut inboxes[b.index()]))
                .collect();
            let view = AdversaryView {
                round: r,
                cfg,
                protocol: s.protocol,
                byzantine: &s.byzantine,
                correct: &self.correct,
                correct_out: &correct_out,
                byz_inbox: &byz_inbox,
            };
            let byz_out = if s.byzantine.is_empty() {
                Vec::new()
            } else {
                adversary.act(&view, &signer)
            };

            let mut delivered = correct_out;
            for mut e in byz_out {
                if self.is_correct(e.from) || !cfg.contains(e.from) {
                    self.violations.push(
                        Violation::new(
                            ViolationKind::Authentication,
                            format!("byzantine message claims sender {}", e.from),
                        )
                        .at(r, e.from),
                    );
                    continue;
                }
                if !cfg.contains(e.to) {
                    continue;
                }
                let byz = &self.byz;
                if let Some(v) = self
                    .ledger
                    .check_byzantine(&e.msg, |q| cfg.contains(q) && !byz[q.index()])
                {
                    self.violations.push(v.at(r, e.from));
                    continue;
                }
                self.note_certificates(&e.msg);
                e.round = r;
                e.layer = e.msg.layer();
                delivered.push(e);
            }
            delivered.sort_by_key(|e| (e.to, e.from));

            for e in delivered {
                buf.clear();
                e.encode_to(&mut buf);
                hasher.update(&buf);
                if let Some(w) = trace.as_deref_mut() {
                    serde_json::to_writer(&mut *w, &e)?;
                    w.write_all(b"\n")?;
                }
                inboxes[e.to.index()].push(e);
            }
        }

        for (v, c) in adversary.held_certificates() {
            let ctx = RegistryContext {
                cfg,
                ledger: &self.ledger,
                faults: s.byzantine.len(),
                unanimous: s.unanimous_value(),
            };
            self.registry.note(Some(v), &c, &ctx, &mut self.violations);
        }
        let held: Vec<(Option<Value>, crate::types::Certificate)> = self
            .machines
            .iter()
            .flatten()
            .filter_map(|m| match m {
                Machine::Bucket(b) => b.acquired().map(|(v, c)| (Some(v), c.clone())),
                Machine::Strong(st) => st.certificate().map(|(v, c)| (v, c.clone())),
            })
            .collect();
        for (v, c) in held {
            let ctx = RegistryContext {
                cfg,
                ledger: &self.ledger,
                faults: s.byzantine.len(),
                unanimous: s.unanimous_value(),
            };
            self.registry.note(v, &c, &ctx, &mut self.violations);
        }

        self.final_checks(total);

        let iterations = self.iteration_records();
        Ok(Report {
            protocol: s.protocol.name().into(),
            t: cfg.t,
            c: cfg.c_string(),
            n,
            t_o: cfg.t_o,
            f: s.byzantine.len(),
            strategy: s.strategy.name().into(),
            seed: s.seed,
            byzantine: s.byzantine.clone(),
            rounds: total,
            processes: self.records.into_values().collect(),
            words: self.words,
            iterations,
            certificates_seen: self.registry.by_kind,
            foreign_certificates: self.registry.foreign,
            violations: self.violations,
            digest: hex::encode(hasher.finalize()),
        })
    }

    fn iteration_records(&self) -> Vec<IterationRecord> {
        let cfg = &self.s.cfg;
        (1..=bucket::iterations(cfg))
            .map(|j| {
                let leader = bucket::leader_of(j);
                let first = (j - 1) * bucket::ROUNDS_PER_ITERATION + 1;
                let words = (first..first + bucket::ROUNDS_PER_ITERATION)
                    .map(|r| self.bucket_round_words.get(r as usize).copied().unwrap_or(0))
                    .sum();
                IterationRecord {
                    iteration: j,
                    leader,
                    leader_correct: self.is_correct(leader),
                    all_certified_before: self
                        .records
                        .values()
                        .all(|r| r.acquire.as_ref().is_some_and(|a| a.iteration < j)),
                    words,
                }
            })
            .collect()
    }

    fn final_checks(&mut self, total: u64) {
        let s = self.s;
        let cfg = &s.cfg;
        let mut v = Vec::new();

        let bucket_end = bucket::total_rounds(cfg);
        for r in self.records.values() {
            if r.stop_round != Some(bucket_end) {
                v.push(Violation::new(
                    ViolationKind::Certification,
                    format!("{} stopped at {:?}, expected round {bucket_end}", r.id, r.stop_round),
                ));
            }
        }

        if s.byzantine.len() <= cfg.t_o {
            let first_correct_leader = (1..=bucket::iterations(cfg)).find(|j| self.is_correct(bucket::leader_of(*j)));
            for r in self.records.values() {
                match (&r.acquire, first_correct_leader) {
                    (None, _) => v.push(Violation::new(
                        ViolationKind::Certification,
                        format!("{} never acquired a certificate with f <= t_o", r.id),
                    )),
                    (Some(a), Some(j)) if a.iteration > j => v.push(Violation::new(
                        ViolationKind::Certification,
                        format!(
                            "{} acquired in iteration {} after correct leader iteration {j}",
                            r.id, a.iteration
                        ),
                    )),
                    _ => {}
                }
            }
        }

        if s.protocol == Protocol::Strong {
            for r in self.records.values() {
                if r.decision.is_none() || r.decision_round != Some(total) {
                    v.push(Violation::new(
                        ViolationKind::Termination,
                        format!(
                            "{} decision {:?} at round {:?}, expected round {total}",
                            r.id, r.decision, r.decision_round
                        ),
                    ));
                }
            }
            let decisions: Vec<Value> = self.records.values().filter_map(|r| r.decision).collect();
            if decisions.windows(2).any(|w| w[0] != w[1]) {
                v.push(Violation::new(
                    ViolationKind::Agreement,
                    format!("decisions {decisions:?}"),
                ));
            }
            if let Some(u) = s.unanimous_value() {
                if decisions.iter().any(|d| *d != u) {
                    v.push(Violation::new(
                        ViolationKind::StrongValidity,
                        format!("unanimous on {u} but decided {decisions:?}"),
                    ));
                }
            }
            for (p, outs) in &self.eba_pairs {
                let decided = outs.iter().flatten().next();
                let ok = decided
                    .is_some_and(|(val, cert)| validate(*val, cert, cfg) && self.records[p].decision == Some(*val));
                if !ok {
                    v.push(Violation::new(
                        ViolationKind::ExternalValidity,
                        format!("{p} decided pair missing or invalid"),
                    ));
                }
            }
            let digests: Vec<&Option<Vec<Option<String>>>> = self.records.values().map(|r| &r.eba_outputs).collect();
            if digests.windows(2).any(|w| w[0] != w[1]) {
                v.push(Violation::new(
                    ViolationKind::BroadcastConsistency,
                    "correct processes resolved different per-instance outputs",
                ));
            }
        }
        self.violations.extend(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{make_config, parse_ratio};

    fn scenario(t: usize, f: usize, strategy: Strategy, proposals: ProposalSpec, protocol: Protocol) -> Scenario {
        let cfg = make_config(t, parse_ratio("1").unwrap()).unwrap();
        Scenario::new(&cfg, f, &ByzantineSpec::FirstF, strategy, &proposals, 1, protocol).unwrap()
    }

    #[test]
    fn unanimous_all_correct_decides() {
        let r = run(&scenario(
            2,
            0,
            Strategy::Silent,
            ProposalSpec::Unanimous(Value(9)),
            Protocol::Strong,
        ));
        assert!(r.is_clean(), "{:?}", r.violations);
        assert!(r.decisions().all(|d| d == Some(Value(9))));
        // nobody needs help: no strong-layer traffic
        assert_eq!(r.words.strong, 0);
        assert_eq!(r.processes[0].decision_round, Some(26));
    }

    #[test]
    fn bucket_only_unanimous_acquires_in_first_iteration() {
        let r = run(&scenario(
            2,
            0,
            Strategy::Silent,
            ProposalSpec::Unanimous(Value(9)),
            Protocol::BucketOnly,
        ));
        assert!(r.is_clean(), "{:?}", r.violations);
        for p in &r.processes {
            let a = p.acquire.as_ref().unwrap();
            assert_eq!((a.iteration, a.value), (1, Value(9)));
            assert_eq!(p.stop_round, Some(18));
        }
    }

    #[test]
    fn silent_first_leader_shifts_acquisition() {
        let r = run(&scenario(
            2,
            1,
            Strategy::Silent,
            ProposalSpec::Unanimous(Value(9)),
            Protocol::BucketOnly,
        ));
        assert!(r.is_clean(), "{:?}", r.violations);
        assert!(r.processes.iter().all(|p| p.acquire.as_ref().unwrap().iteration == 2));
    }

    #[test]
    fn distinct_proposals_agree() {
        let r = run(&scenario(
            2,
            0,
            Strategy::Silent,
            ProposalSpec::DistinctFrom(Value(1)),
            Protocol::Strong,
        ));
        assert!(r.is_clean(), "{:?}", r.violations);
        let d: Vec<_> = r.decisions().collect();
        assert!(d.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn digest_is_deterministic() {
        let s = scenario(
            2,
            2,
            Strategy::EquivocatingLeader,
            ProposalSpec::DistinctFrom(Value(1)),
            Protocol::Strong,
        );
        assert_eq!(run(&s).digest, run(&s).digest);
    }

    #[test]
    fn trace_lines_match_delivered_messages() {
        let s = scenario(
            1,
            0,
            Strategy::Silent,
            ProposalSpec::Unanimous(Value(3)),
            Protocol::BucketOnly,
        );
        let mut out = Vec::new();
        let r = run_traced(&s, &mut out).unwrap();
        assert_eq!(r.digest, run(&s).digest);
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().count() > 0);
        for line in text.lines() {
            serde_json::from_str::<serde_json::Value>(line).unwrap();
        }
    }
}
