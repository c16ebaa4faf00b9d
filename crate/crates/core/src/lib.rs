//! Knowledge-distillation laboratory built around token-level adaptive
//! switching between student (on-policy) and teacher (off-policy) generation.
//!
//! Models are exact context-conditioned softmax tables, so every loss,
//! gradient and expectation can be checked against brute force. The crate
//! is organised bottom-up:
//!
//! - [`corpus`]: deterministic synthetic tasks and exact-match scoring
//! - [`model`]: tabular language models, sampling and analytic gradients
//! - [`divergence`]: forward/reverse KL and Jensen-Shannon divergence
//! - [`policies`]: baseline target-sequence selection strategies
//! - [`switching`]: the sliding-window adaptive switch generator
//! - [`trainer`]: teacher fine-tuning and the distillation loop
//! - [`telemetry`]: switch statistics, windowed reports, runtime proxies
//! - [`oracle`]: enumeration and replay checkers for small instances
//! - [`harness`]: configuration, persistence and experiment orchestration

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod policies;
pub mod rng;
pub mod switching;
pub mod telemetry;
pub mod trainer;

pub use error::{Error, Result};

/// Token identifier inside a [`corpus::Vocab`].
pub type TokenId = u32;
