//! Multimodal aspect-based sentiment analysis with LLM event decomposition
//! and reinforcement learning.
//!
//! The pipeline: normalize text+image datasets ([`corpus`]), decompose each
//! text into an ordered sequence event set with an LLM or a deterministic
//! fallback ([`decompose`]), run a multimodal tagging agent with
//! cross-attention fusion ([`agent`]), roll episodes over an environment
//! that appends one event per step and pays token-level F1 as reward
//! ([`env`]), train by supervised clone learning followed by REINFORCE
//! ([`trainer`]), and score (aspect, sentiment) pairs with exact-match
//! micro-F1 ([`metrics`]).
//!
//! See the crate `examples/` directory for one runnable walkthrough per
//! capability, and the `mabsa-rl` binary for the batch CLI.

pub mod agent;
pub mod corpus;
pub mod decompose;
pub mod env;
pub mod error;
pub mod metrics;
pub mod trainer;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
