use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input (bad sizes, inconsistent adjacency, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The path-loss exponent initializer found no anchor-anchor links.
    #[error("no anchor-anchor links are available to initialize the path-loss exponent")]
    NoAnchorLinks,

    /// A linear system or information matrix could not be inverted.
    #[error("singular system: {0}")]
    Singular(String),

    /// A symbol requested from a variable space was never declared.
    #[error("construction error: {0}")]
    Construction(String),

    /// The conic solver did not return a usable point.
    #[error("solver failed: {0}")]
    Solver(String),

    /// A required field is missing for the requested operation.
    #[error("missing field `{field}`: {reason}")]
    MissingField { field: String, reason: String },

    /// A malformed record in an input file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
