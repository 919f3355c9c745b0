//! Signature bookkeeping and the global certificate registry.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::crypto::{share_verify, CombinedSig, Digest32};
use crate::report::{Violation, ViolationKind};
use crate::types::{validate, Certificate, CertificateKind, Config, ProcessId, ProtocolMessage, Value, DEFAULT_VALUE};

/// Every share a correct process has released.
#[derive(Debug, Default)]
pub struct ShareLedger {
    released: HashSet<(ProcessId, usize, [u8; 16])>,
    signers: HashMap<(usize, Digest32), BTreeSet<ProcessId>>,
}

impl ShareLedger {
    /// Records the shares in a message sent by a correct process.
    pub fn note_correct(&mut self, msg: &ProtocolMessage, correct: impl Fn(ProcessId) -> bool) {
        for s in msg.shares() {
            if !correct(s.signer()) {
                continue;
            }
            if self.released.insert((s.signer(), s.threshold(), *s.mac())) && s.threshold() > 1 {
                self.signers
                    .entry((s.threshold(), s.message().digest()))
                    .or_default()
                    .insert(s.signer());
            }
        }
    }

    /// A valid share in a Byzantine message that carries a correct signer
    /// must have been released by that signer.
    pub fn check_byzantine(&self, msg: &ProtocolMessage, correct: impl Fn(ProcessId) -> bool) -> Option<Violation> {
        msg.shares()
            .into_iter()
            .find(|s| {
                correct(s.signer())
                    && share_verify(s)
                    && !self.released.contains(&(s.signer(), s.threshold(), *s.mac()))
            })
            .map(|s| {
                Violation::new(
                    ViolationKind::Forgery,
                    format!("share of correct {} never released by it", s.signer()),
                )
            })
    }

    pub fn correct_signers(&self, k: usize, digest: &Digest32) -> usize {
        self.signers.get(&(k, *digest)).map_or(0, BTreeSet::len)
    }
}

/// Every distinct certificate observed in a run.
#[derive(Debug, Default)]
pub struct CertificateRegistry {
    seen: HashSet<Certificate>,
    sigs: HashSet<CombinedSig>,
    pub by_kind: BTreeMap<CertificateKind, usize>,
    pub foreign: usize,
}

pub struct RegistryContext<'a> {
    pub cfg: &'a Config,
    pub ledger: &'a ShareLedger,
    pub faults: usize,
    /// Set when all correct processes proposed this value.
    pub unanimous: Option<Value>,
}

impl CertificateRegistry {
    /// Notes a certificate found next to `claimed`. Checks every combined
    /// signature against the ledger and, under unanimity, flags any valid
    /// certificate legitimizing another value.
    pub fn note(
        &mut self,
        claimed: Option<Value>,
        cert: &Certificate,
        ctx: &RegistryContext<'_>,
        out: &mut Vec<Violation>,
    ) {
        if self.seen.contains(cert) {
            return;
        }
        self.seen.insert(cert.clone());

        for sig in cert.combined_sigs() {
            if !self.sigs.insert(sig.clone()) {
                continue;
            }
            let k = sig.threshold();
            let honest = ctx.ledger.correct_signers(k, sig.message_digest());
            if honest + ctx.faults < k {
                out.push(Violation::new(
                    ViolationKind::Forgery,
                    format!(
                        "combined signature at threshold {k} with only {honest} correct signers and f = {}",
                        ctx.faults
                    ),
                ));
            }
        }

        let v = match cert {
            Certificate::Specific { value, .. } => *value,
            _ => claimed.unwrap_or(DEFAULT_VALUE),
        };
        if !validate(v, cert, ctx.cfg) {
            return;
        }
        *self.by_kind.entry(cert.kind()).or_default() += 1;
        if let Some(u) = ctx.unanimous {
            let foreign = match cert {
                Certificate::Specific { value, .. } => *value != u,
                _ => true,
            };
            if foreign {
                self.foreign += 1;
                out.push(Violation::new(
                    ViolationKind::CertificationSafety,
                    format!("valid {:?} certificate for {v} under unanimity on {u}", cert.kind()),
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{combine, share_sign};
    use crate::types::{make_config, parse_ratio};

    fn specific(v: u64, signers: &[u32]) -> Certificate {
        let m = Value(v).scheme_message();
        let shares: Vec<_> = signers.iter().map(|p| share_sign(ProcessId::new(*p), 3, &m)).collect();
        Certificate::Specific {
            value: Value(v),
            sig: combine(3, &shares).unwrap(),
        }
    }

    #[test]
    fn unbacked_combined_signature_is_a_forgery() {
        let cfg = make_config(2, parse_ratio("1").unwrap()).unwrap();
        let ledger = ShareLedger::default();
        let ctx = RegistryContext {
            cfg: &cfg,
            ledger: &ledger,
            faults: 2,
            unanimous: None,
        };
        let mut reg = CertificateRegistry::default();
        let mut out = Vec::new();
        reg.note(None, &specific(5, &[1, 2, 3]), &ctx, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, ViolationKind::Forgery);
    }

    #[test]
    fn released_shares_back_the_signature() {
        let cfg = make_config(2, parse_ratio("1").unwrap()).unwrap();
        let mut ledger = ShareLedger::default();
        let share = share_sign(ProcessId::new(3), 3, &Value(5).scheme_message());
        ledger.note_correct(&ProtocolMessage::Disclose { value: Value(5), share }, |p| p.get() >= 3);
        let ctx = RegistryContext {
            cfg: &cfg,
            ledger: &ledger,
            faults: 2,
            unanimous: None,
        };
        let mut out = Vec::new();
        CertificateRegistry::default().note(None, &specific(5, &[1, 2, 3]), &ctx, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn foreign_certificate_under_unanimity_is_flagged() {
        let cfg = make_config(2, parse_ratio("1").unwrap()).unwrap();
        let ledger = ShareLedger::default();
        let ctx = RegistryContext {
            cfg: &cfg,
            ledger: &ledger,
            faults: 3,
            unanimous: Some(Value(9)),
        };
        let mut reg = CertificateRegistry::default();
        let mut out = Vec::new();
        reg.note(None, &specific(9, &[1, 2, 3]), &ctx, &mut out);
        assert!(out.is_empty());
        reg.note(None, &specific(8, &[1, 2, 3]), &ctx, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, ViolationKind::CertificationSafety);
        assert_eq!(reg.foreign, 1);
    }
}
