//! Simulation library for adaptive strong Byzantine agreement with
//! certificate-based validity.
//!
//! The protocol layers ([`certcreate`], [`bucket`], [`strong`], [`eba`]) are
//! pure round-driven state machines. [`sim`] schedules them against an
//! adversary, meters words and checks invariants; [`exec`] and [`sweep`]
//! run batches of scenarios.

pub mod bounds;
pub mod bucket;
pub mod certcreate;
pub mod codec;
pub mod crypto;
pub mod eba;
pub mod error;
pub mod exec;
pub mod partition;
pub mod report;
pub mod sim;
pub mod strong;
pub mod sweep;
pub mod types;
