use serde::Serialize;
use thiserror::Error;

/// Where a correction run starved, with the set sizes that ate the reserve.
/// Serialized verbatim into failure reports.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectionFailure {
    pub tree: usize,
    pub step: usize,
    pub x_size: usize,
    pub y_size: usize,
    pub z_size: usize,
    pub u_size: usize,
    pub reserve_size: usize,
    pub epsilon: f64,
    pub ell: usize,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("exact mode for p={p} needs {tuples} tuples, budget is {budget}")]
    ExactBudget { p: usize, tuples: u128, budget: u64 },

    #[error("edge {{{u}, {v}}} is not present (already removed or never existed)")]
    EdgeAbsent { u: usize, v: usize },

    #[error("contract violation: {0}")]
    Internal(String),

    #[error("round {round} failed: {reason}")]
    RoundFailure { round: usize, reason: String },

    #[error(
        "correction starved at tree {} step {} (|X|={}, |Y|={}, |Z|={}, |U|={}, reserve {})",
        .0.tree, .0.step, .0.x_size, .0.y_size, .0.z_size, .0.u_size, .0.reserve_size
    )]
    CorrectionFailure(CorrectionFailure),

    #[error("search budget of {0} nodes exhausted")]
    SearchBudget(u64),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Retryable failures are the stochastic ones: a fresh seed may succeed.
    /// Input and capability errors are not retryable.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::RoundFailure { .. } | Error::CorrectionFailure(_)
        )
    }
}
