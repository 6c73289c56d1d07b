use thiserror::Error;

use crate::archspace::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {}", join_violations(.0))]
    InvalidArch(Vec<Violation>),

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no valid sample after {attempts} attempts")]
    RejectionLimit { attempts: usize },

    #[error("space holds {size} raw combinations, above the enumeration limit {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular value decomposition of a {rows}x{cols} matrix did not converge")]
    Decomposition { rows: usize, cols: usize },

    #[error("entropy table is stale: {0}")]
    StaleTable(String),

    #[error("entropy table has no entry for shape ({rows}, {cols})")]
    MissingKey { rows: u32, cols: u32 },

    #[error("sequence length {seq_len} outside [1, {max_positions}]")]
    SeqLen { seq_len: u32, max_positions: u32 },

    #[error("layer ({embed_dim}, {ffn_dim}) lies outside the device profile grid")]
    OutOfGrid { embed_dim: u32, ffn_dim: u32 },

    #[error("latency budget requires a device profile")]
    MissingProfile,

    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
