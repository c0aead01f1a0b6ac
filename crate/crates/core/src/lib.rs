//! Federated fine-tuning of low-rank adapters under differential privacy,
//! simulated on a single machine.
//!
//! `K` nodes each hold a shard of a synthetic classification task. Every
//! round the server broadcasts the adapter weights, each node takes a
//! clipped and noised gradient step on its own data, and the server
//! averages the returned adapters weighted by shard size. Privacy is
//! tracked with a moments accountant and the communication cost of every
//! round is counted exactly.

pub mod config;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod ledger;
pub mod lora;
pub mod numerics;
pub mod privacy;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
