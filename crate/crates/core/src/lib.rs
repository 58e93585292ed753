//! Model-based reinforcement learning on imagined latent trajectories.
//!
//! A recurrent state-space model is learned from image observations of a
//! lane-keeping task; an actor and two independently trained critics are
//! then optimised entirely on trajectories rolled out inside the learned
//! model, with the elementwise minimum of the critics' λ-returns used as
//! the value target.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod imagination;
pub mod lane_sim;
pub mod latent_model;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod trainer;

pub use error::{LvmError, Result};
