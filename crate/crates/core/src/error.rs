//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid PE topology (non power-of-two m, schedule mismatch, ...).
    #[error("topology error: {0}")]
    Topology(String),

    /// Invalid runtime configuration (threshold out of range, bad algorithm name, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Mathematically invalid input (nonpositive weight, zero total weight, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched dimensions or lengths.
    #[error("shape error: {0}")]
    Shape(String),

    /// A zero-length trajectory was requested.
    #[error("empty trajectory: n_max must be at least 1")]
    EmptyTrajectory,

    /// Non-finite numeric input.
    #[error("numeric input error: {0}")]
    NumericInput(String),

    /// A test-only size guard was exceeded.
    #[error("size guard exceeded: {0}")]
    Guard(String),

    /// Worker thread could not be spawned or panicked.
    #[error("engine runtime error: {0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;
