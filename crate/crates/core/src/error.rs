use thiserror::Error;

use crate::types::ProcessId;

/// Fatal state-machine misuse. Indicates a scheduler bug, never adversarial input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("round {got} delivered, expected round {expected}")]
    OrderViolation { expected: u64, got: u64 },
    #[error("{0} is not a process of this configuration")]
    InvalidProcess(ProcessId),
    #[error("state machine already finished")]
    Finished,
}
