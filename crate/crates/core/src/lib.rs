//! Multilingual negotiation arena: bargaining games, agents, a model
//! gateway, a batch runner and the statistics used to compare outcomes.

pub mod agents;
pub mod cli;
pub mod games;
pub mod gateway;
pub mod metrics;
pub mod orchestrator;
pub mod protocol;
mod util;

pub use util::stable_hash;
