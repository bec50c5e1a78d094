//! Multi-cell base-station power control with in-context-learning example
//! selection.
//!
//! The crate simulates a small cluster of interfering base stations whose
//! transmission power is chosen from a discrete set of levels. Decisions are
//! made by pluggable backends: an LLM queried over an OpenAI-compatible chat
//! endpoint, a deterministic surrogate that imitates example-following, a
//! tabular Q-learning baseline, or uniform random. Every episode produces a
//! `(state, action, reward)` example that is appended to an experience pool;
//! the pool is mined for the good/bad demonstrations embedded in the next
//! prompt.
//!
//! Modules:
//! - [`env`] — radio environment: channel gains, proportional-fair RB
//!   allocation, achievable rates, constraint check, reward.
//! - [`pool`] — experience pool with exact-match (discrete state) and
//!   ranked (continuous state) example selection.
//! - [`prompt`] — deterministic prompt rendering and reply parsing.
//! - [`policy`] — decision backends and the epsilon-greedy wrapper.
//! - [`runner`] — the episode loop, exhaustive-search oracle, metrics CSV,
//!   pool persistence, and run configuration.

pub mod env;
pub mod error;
pub mod policy;
pub mod pool;
pub mod prompt;
pub mod runner;

pub use error::{Error, Result};
