//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by any module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Lattice dimension outside the supported range.
    #[error("invalid dimension d = {0}; require 1 <= d")]
    InvalidDimension(usize),

    /// Lattice side outside the supported range.
    #[error("invalid side n = {0}; require 1 <= n")]
    InvalidSide(usize),

    /// The requested volume does not fit the configured capacity.
    #[error("volume {volume} exceeds capacity {capacity}")]
    VolumeOverflow { volume: u128, capacity: u64 },

    /// Exact enumeration was requested above the configured cap.
    #[error("CAP_EXCEEDED: exact enumeration needs |V_n| <= {cap}, got {volume}")]
    CapExceeded { volume: u64, cap: u64 },

    /// A rank-p coupling sum was requested above the term budget.
    #[error("BUDGET_EXCEEDED: rank-{p} sum needs {needed} terms, budget {budget}")]
    BudgetExceeded { p: u32, needed: u128, budget: u64 },

    /// Moment order outside the supported bookkeeping range.
    #[error("unsupported moment order j = {0}; require 0 <= j <= 7")]
    UnsupportedMoment(u32),

    /// A family was asked for an integration-by-parts order above its
    /// Gaussian moment-match order.
    #[error("match order {match_order} of family `{family}` is below the requested k = {k}")]
    MatchOrderTooSmall {
        family: String,
        match_order: u32,
        k: u32,
    },

    /// Invalid model or estimator parameter.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A spin-configuration operation mixed incompatible sizes.
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    /// The requested expectation has no exact route and sampling was not
    /// enabled.
    #[error("no exact route for observable `{0}` and sampling is disabled")]
    ExactUnavailable(String),

    /// Experiment configuration failed validation.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Output files could not be written.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Config parse error from serde.
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
