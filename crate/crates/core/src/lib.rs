//! Deterministic simulator and scheduling library for hierarchical
//! federated low-rank-adapter fine-tuning.
//!
//! Devices with skewed label distributions are partitioned into near-IID
//! groups, each group trains a depth-restricted slice of a shared layered
//! adapter model and averages adapters among its members several times per
//! round, and a resource-aware discounted UCB bandit picks each group's
//! (aggregation frequency, fine-tuning depth) arm. Everything runs on
//! simulated clocks with named random streams, so identical configs and
//! seeds reproduce identical logs byte for byte.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod grouping;
pub mod logging;
pub mod model;
pub mod monitor;
pub mod rng;
pub mod scheduler;

pub use error::{Error, Result};
