//! Core library for routing token payloads through bandwidth-, latency-, and
//! guard-constrained agent graphs, optimizing chunked payloads under a
//! permutation-invariant loss, and simulating asynchronous delivery.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`graph`]: the agent-graph domain model, topology generators, JSON I/O.
//! - [`flow`]: min-cost max-flow routing and chunk-plan construction.
//! - [`risk`]: detection-curve calibration and per-token risk coefficients.
//! - [`models`]: scoring-model and detector interfaces, toy implementations,
//!   and HTTP clients for served models.
//! - [`optimizer`]: the permutation-invariant evasion loss and the greedy
//!   coordinate search over chunk tokens.
//! - [`sim`]: deterministic discrete-event simulation of chunk delivery.
//! - [`harness`]: dataset ingestion, experiment orchestration, and metrics.

pub mod flow;
pub mod graph;
pub mod harness;
pub mod models;
pub mod optimizer;
pub mod risk;
pub mod sim;

pub use models::TokenId;
