//! Process channels: choreography models compiled to bitmask state machines,
//! enacted off-chain under all-party signatures and settled on a simulated
//! ledger.

pub mod fixtures;
pub mod ledger;
pub mod machine;
pub mod marking;
pub mod model;
pub mod net;
pub mod synth;
pub mod wire;
