//! Simulation-backed reinforcement-learning qubit initialization.
//!
//! A stochastic transmon readout environment, a latency-modeled streaming
//! policy network, a PPO trainer, threshold baselines, a supervised state
//! discriminator, and the experiment harness tying them together.

pub mod baseline;
pub mod discriminator;
pub mod envsim;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod ppo;
pub mod readout;

pub use error::{Error, Result};
