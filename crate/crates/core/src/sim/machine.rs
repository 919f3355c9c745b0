//! A per-process protocol instance, uniform over the two top-level protocols.

use crate::bucket::{self, BucketState};
use crate::error::ProtocolError;
use crate::strong::{self, StrongEvent, StrongState};
use crate::types::{Config, Envelope, Outgoing, ProcessId, Value};

use super::scenario::Protocol;

#[derive(Debug, Clone)]
pub enum Machine {
    Bucket(Box<BucketState>),
    Strong(Box<StrongState>),
}

impl Machine {
    pub fn new(protocol: Protocol, proposal: Value, cfg: &Config, me: ProcessId) -> Result<Self, ProtocolError> {
        Ok(match protocol {
            Protocol::BucketOnly => Machine::Bucket(Box::new(BucketState::new(proposal, cfg, me)?)),
            Protocol::Strong => Machine::Strong(Box::new(StrongState::new(proposal, cfg, me)?)),
        })
    }

    /// Bucket events are reported as [`StrongEvent::Bucket`].
    pub fn step(&mut self, round: u64, inbox: &[Envelope]) -> Result<(Vec<Outgoing>, Vec<StrongEvent>), ProtocolError> {
        match self {
            Machine::Bucket(b) => {
                let s = b.step(round, inbox)?;
                Ok((s.out, s.events.into_iter().map(StrongEvent::Bucket).collect()))
            }
            Machine::Strong(s) => {
                let s = s.step(round, inbox)?;
                Ok((s.out, s.events))
            }
        }
    }
}

pub fn total_rounds(protocol: Protocol, cfg: &Config) -> u64 {
    match protocol {
        Protocol::BucketOnly => bucket::total_rounds(cfg),
        Protocol::Strong => strong::total_rounds(cfg),
    }
}
