use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how a caller should react: `Usage` and
/// `Validation` indicate bad inputs, `Config` a malformed experiment file,
/// `ResourceCap` a refusal to exceed a configured limit, and `Numerical` a
/// failed internal numerical check (e.g. a propagator that came out
/// non-unitary).
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that cannot be combined (dimension mismatch,
    /// unknown label, index out of range).
    #[error("usage error: {0}")]
    Usage(String),

    /// An input object failed a mathematical validity check.
    #[error("validation error: {0}")]
    Validation(String),

    /// Experiment configuration could not be parsed or is semantically
    /// invalid.
    #[error("config error: {0}")]
    Config(String),

    /// A computation was refused because it would exceed a resource cap.
    #[error("resource cap exceeded: {what} would exceed cap {cap}")]
    ResourceCap { what: String, cap: u64 },

    /// An internal numerical invariant did not hold to tolerance.
    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for invalid input, 3 for a resource
    /// refusal, 4 for a failed numerical check.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Validation(_) | Error::Config(_) | Error::Io(_) => 2,
            Error::ResourceCap { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}
