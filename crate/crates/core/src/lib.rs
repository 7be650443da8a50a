//! Reinforcement learning for PDE control with function-valued actions.
//!
//! The crate bundles two finite-difference PDE environments, adapters that
//! turn a handful of action scalars into an executable action field, a small
//! feedforward network engine with hand-written backpropagation, and DDPG with
//! vector, separate-network and descriptor-based actors.

pub mod adapters;
pub mod ddpg;
pub mod error;
pub mod envs;
pub mod fields;
pub mod harness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
