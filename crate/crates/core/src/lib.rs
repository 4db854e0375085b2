//! Workbench for a human-shaped continuous actor-critic learner.
//!
//! A Gaussian-policy actor-critic controls one elbow joint and learns to
//! mirror a preprogrammed periodic trajectory. Its reward is the task reward
//! plus a smeared human feedback channel, either simulated (with explicit
//! feedback probability, correctness and smear) or delivered live over a
//! socket.
//!
//! Modules, bottom-up:
//! - [`tiles`]: tile coding of the (EMG, joint angle) observation
//! - [`learner`]: the actor-critic update and the shaped-reward sum
//! - [`env`]: the mirrored tracking task and synthetic EMG
//! - [`feedback`]: simulated trainer and smear accumulator
//! - [`harness`]: trials, sweeps, statistics, result files
//! - [`live`]: paced live sessions and offline replay

pub mod config;
pub mod env;
pub mod error;
pub mod exec;
pub mod feedback;
pub mod harness;
pub mod learner;
pub mod live;
pub mod rng;
pub mod tiles;

pub use config::{ExperimentConfig, SweepConfig, TrialConfig};
pub use error::{Error, Result};
