//! Compartmentalized MultiPaxos as deterministic role state machines.
//!
//! Every role is a plain struct whose handlers take a message or timer and
//! write their effects into an [`Outbox`](message::Outbox). Nothing here does
//! IO; the [`sim`] module drives the roles under a seeded network.

#![no_std]

extern crate alloc;

pub mod batching;
pub mod checker;
pub mod client;
pub mod config;
pub mod eval;
pub mod message;
pub mod node;
pub mod quorums;
pub mod read_path;
pub mod replica;
pub mod sim;
pub mod write_path;

pub use config::{validate_plan, Ballot, Batch, ClientId, Command, DeploymentPlan, Op, PlanError, Slot, Variant, Watermark};
pub use message::{Message, NodeId, Observation, Outbox};
pub use quorums::{AcceptorId, GridQuorumSystem, MajorityQuorumSystem, QuorumSystem};
pub use read_path::ReadConsistency;
