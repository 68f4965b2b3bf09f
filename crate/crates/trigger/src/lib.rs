//! Per-participant channel nodes.
//!
//! [`TriggerNode`] is transport free: handlers take the current logical time
//! and a [`ChainClient`] and return the messages to send. [`SimNetwork`]
//! drives a set of nodes in-process; [`tcp`] puts each node behind a socket.

pub mod chain;
pub mod node;
pub mod sim;
pub mod tcp;

pub use chain::{ChainClient, SharedLedger};
pub use node::{
    Archive, Behaviour, CloseError, EnactError, Enacted, NodeEvent, NodeStatus, Outbound, TriggerConfig, TriggerNode,
};
pub use sim::{Faults, Outcome, SimConfig, SimNetwork};
