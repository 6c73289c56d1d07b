//! Training-free design of small autoregressive transformer decoders.
//!
//! Candidate architectures are scored by the expected entropy of their
//! randomly initialized weight matrices, penalized for excessive depth, and
//! searched with an evolutionary algorithm under a parameter, FLOPs or
//! latency budget. Matrix entropies come from a lookup table built once per
//! search space.

pub mod archspace;
pub mod costmodel;
pub mod entropy;
pub mod error;
pub mod evosearch;
pub mod schema;

pub use archspace::{ArchConfig, BlockSpec, SearchSpaceDef};
pub use costmodel::{BudgetSpec, CostReport, DeviceProfile, Metric};
pub use entropy::{EntropyConfig, EntropyTable, ScoreBreakdown};
pub use error::{Error, Result};
pub use evosearch::{Candidate, SearchConfig, SearchResult};
