//! Learned optimization schedules for iterative-alternate training.
//!
//! A task exposes a set of (loss, parameter-group) actions; a schedule picks
//! one per step. The controller policy is a small network trained with
//! REINFORCE or PPO to pick actions from training-progress features.

pub mod baselines;
pub mod controller;
pub mod error;
pub mod features;
pub mod gan;
pub mod multialt;
pub mod numkit;
pub mod ppo;
pub mod reinforce;
pub mod sched;
pub mod tasks;

pub use error::{Error, Result};
