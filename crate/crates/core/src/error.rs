use thiserror::Error;

/// Errors produced by the library.
#[derive(Error, Debug)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A softmin over a vector with no finite entry.
    #[error("no finite branch in softmin input")]
    NoFiniteBranch,

    /// No path exists between the requested nodes.
    #[error("no path from {source_node} to {target}")]
    NoPath { source_node: usize, target: usize },

    /// The requested pair has an empty shortcut distribution.
    #[error("pair ({0}, {1}) is unreachable")]
    Unreachable(usize, usize),

    /// A masked shortcut row renormalized to zero during sampling.
    #[error("shortcut mass at ({0}, {1}) underflowed to zero; beta is too small for these costs")]
    ZeroRow(usize, usize),

    /// Monte Carlo sampling produced no accepted walk.
    #[error("all {0} sampled walks were rejected")]
    AllRejected(usize),

    /// The oracle refused an instance that is too large to enumerate.
    #[error("enumeration refused: {0}")]
    EnumerationRefused(String),

    /// Synthetic generation could not produce a valid instance.
    #[error("generation error: {0}")]
    Generation(String),

    /// A non-finite value appeared in a loss or gradient.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
