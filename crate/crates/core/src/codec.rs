//! Canonical binary encoding of certificates and messages.
//!
//! The encoding is used for run digests and as the byte string signed by the
//! reference EBA's signature chains. Every variant starts with a distinct tag
//! byte and every variable-length field is length-prefixed, so the encoding is
//! injective.

use crate::crypto::{CombinedSig, SchemeMessage, Share};
use crate::types::{Certificate, Envelope, Interval, ProcessId, ProtocolMessage, Value};

pub trait Encode {
    fn encode_to(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_to(&mut out);
        out
    }
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_be_bytes());
}

fn put_len(out: &mut Vec<u8>, len: usize) {
    put_u32(out, len as u32);
}

impl Encode for Value {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0.to_be_bytes());
    }
}

impl Encode for ProcessId {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u32(out, self.get());
    }
}

impl Encode for Interval {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.x.encode_to(out);
        self.y.encode_to(out);
        out.push(self.terminal as u8);
    }
}

impl Encode for CombinedSig {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u32(out, self.threshold() as u32);
        out.extend_from_slice(self.message_digest());
        out.extend_from_slice(self.signer_set_digest());
    }
}

impl Encode for Share {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.signer().encode_to(out);
        put_u32(out, self.threshold() as u32);
        put_len(out, self.message().as_bytes().len());
        out.extend_from_slice(self.message().as_bytes());
        out.extend_from_slice(self.mac());
    }
}

impl Encode for Certificate {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Certificate::Specific { value, sig } => {
                out.push(0);
                value.encode_to(out);
                sig.encode_to(out);
            }
            Certificate::General { sig } => {
                out.push(1);
                sig.encode_to(out);
            }
            Certificate::Negative { groups } => {
                out.push(2);
                put_len(out, groups.len());
                for g in groups.iter() {
                    g.interval.encode_to(out);
                    g.tsig.encode_to(out);
                }
            }
        }
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(x) => {
                out.push(1);
                x.encode_to(out);
            }
        }
    }
}

impl Encode for ProtocolMessage {
    fn encode_to(&self, out: &mut Vec<u8>) {
        use ProtocolMessage::*;
        match self {
            Disclose { value, share } => {
                out.push(1);
                value.encode_to(out);
                share.encode_to(out);
            }
            PartitionReq { descriptions } => {
                out.push(2);
                put_len(out, descriptions.len());
                descriptions.iter().for_each(|d| d.encode_to(out));
            }
            PartitionReply { negatives } => {
                out.push(3);
                put_len(out, negatives.len());
                for (d, s) in negatives {
                    d.encode_to(out);
                    s.encode_to(out);
                }
            }
            CertificateMsg { value, certificate } => {
                out.push(4);
                value.encode_to(out);
                certificate.encode_to(out);
            }
            AidReq => out.push(5),
            AidReply { value, certificate } => {
                out.push(6);
                value.encode_to(out);
                certificate.encode_to(out);
            }
            HelpReq => out.push(7),
            HelpReply {
                forward_value,
                certificate,
                proposal_share,
            } => {
                out.push(8);
                forward_value.encode_to(out);
                certificate.encode_to(out);
                proposal_share.encode_to(out);
            }
            FinalCertificate { value, certificate } => {
                out.push(9);
                value.encode_to(out);
                certificate.encode_to(out);
            }
            AllowAny { share } => {
                out.push(10);
                share.encode_to(out);
            }
            EbaMsg(p) => {
                // chain entries carry signer and mac only; the signed message is implied
                out.push(11);
                p.instance.encode_to(out);
                p.value.encode_to(out);
                p.certificate.encode_to(out);
                put_len(out, p.chain.len());
                for s in &p.chain {
                    s.signer().encode_to(out);
                    out.extend_from_slice(s.mac());
                }
            }
        }
    }
}

impl Encode for Envelope {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.round.to_be_bytes());
        self.from.encode_to(out);
        self.to.encode_to(out);
        self.msg.encode_to(out);
    }
}

/// Byte string signed by every link of an EBA signature chain.
pub fn eba_chain_message(instance: ProcessId, value: Value, cert: &Certificate) -> SchemeMessage {
    let mut out = b"eba-relay".to_vec();
    instance.encode_to(&mut out);
    value.encode_to(&mut out);
    cert.encode_to(&mut out);
    SchemeMessage::from_bytes(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::share_sign;

    #[test]
    fn distinct_messages_encode_distinctly() {
        let share = share_sign(ProcessId::new(1), 3, &Value(1).scheme_message());
        let msgs = [
            ProtocolMessage::AidReq,
            ProtocolMessage::HelpReq,
            ProtocolMessage::AllowAny { share: share.clone() },
            ProtocolMessage::Disclose {
                value: Value(1),
                share: share.clone(),
            },
            ProtocolMessage::Disclose {
                value: Value(2),
                share: share.clone(),
            },
            ProtocolMessage::PartitionReq { descriptions: vec![] },
            ProtocolMessage::PartitionReply { negatives: vec![] },
            ProtocolMessage::AidReply {
                value: None,
                certificate: None,
            },
        ];
        let mut enc: Vec<_> = msgs.iter().map(Encode::encode).collect();
        enc.sort();
        enc.dedup();
        assert_eq!(enc.len(), msgs.len());
    }
}
