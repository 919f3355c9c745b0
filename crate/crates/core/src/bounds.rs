//! Frozen word-count constants, derived from the word-cost rule.
//!
//! | constant | worst case |
//! |---|---|
//! | [`HELP_REPLY_SPECIFIC`] | `HelpReply` with a value-specific certificate: header, value, signature, share |
//! | [`HELP_REPLY_MAX`] | `HelpReply` with a five-group negative certificate |
//! | [`AID_REPLY_SPECIFIC`] | `AidReply` with a value-specific certificate |
//! | [`AID_REPLY_MAX`] | `AidReply` with a five-group negative certificate |
//! | [`STRONG_PER_PROCESS`] | a process without a certificate: `HelpReq` + bare `HelpReply` + `FinalCertificate`, each to `n` |
//! | [`BUCKET_PER_ITERATION`] | correct leader broadcasting `AidReq`, `PartitionReq` and a five-group certificate, all processes disclosing and replying |
//!
//! `QUIESCENT_PER_FAULT` is the per-fault allowance for silence phases; it
//! covers both specific-certificate replies. `GLOBAL_C_PRIME` was calibrated
//! on `n = 7` and frozen.

use crate::types::MAX_GROUPS;

const GROUP_WORDS: u64 = 3;
const NEGATIVE_MAX: u64 = GROUP_WORDS * MAX_GROUPS as u64;

pub const HELP_REPLY_SPECIFIC: u64 = 4;
pub const HELP_REPLY_MAX: u64 = 3 + NEGATIVE_MAX;
pub const AID_REPLY_SPECIFIC: u64 = 3;
pub const AID_REPLY_MAX: u64 = 2 + NEGATIVE_MAX;
pub const QUIESCENT_PER_FAULT: u64 = 4;

/// Largest single message: a certificate message with five groups.
pub const MAX_MESSAGE_WORDS: u64 = 2 + NEGATIVE_MAX;

pub const STRONG_PER_PROCESS: u64 = 20;
pub const BUCKET_PER_ITERATION: u64 = 46;

/// `W(f) <= GLOBAL_C_PRIME * n * (f + 1)` for non-EBA words.
pub const GLOBAL_C_PRIME: u64 = 60;

/// Largest allowed ratio between `W(0) / n` values across system sizes.
pub const LINEARITY_RATIO: f64 = 2.0;

/// Bound on one correct process's strong-layer words when `f <= t_o`.
pub fn strong_quiescent_bound(f: usize, value_specific: bool) -> u64 {
    f as u64
        * if value_specific {
            QUIESCENT_PER_FAULT
        } else {
            HELP_REPLY_MAX
        }
}

/// Bound on correct bucket-layer words in a correct-leader iteration that starts with everyone certified.
pub fn bucket_quiescent_bound(f: usize, value_specific: bool) -> u64 {
    f as u64
        * if value_specific {
            QUIESCENT_PER_FAULT
        } else {
            AID_REPLY_MAX
        }
}

pub fn global_bound(n: usize, f: usize) -> u64 {
    GLOBAL_C_PRIME * n as u64 * (f as u64 + 1)
}
