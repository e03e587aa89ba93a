//! Error types shared across the crate, with a stable mapping to process
//! exit codes for the CLI.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes produced by this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shape mismatch; names the operation and both offending shapes.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// API misuse that is not a shape problem (wrong solver method, grid
    /// mismatch, non-scalar loss, ...).
    Contract(String),
    /// Non-finite value produced by a forward operation.
    Numeric(String),
    /// Integration state exceeded the divergence threshold (or went
    /// non-finite) at a specific step.
    Divergence { step: usize, magnitude: f64 },
    /// Invalid configuration; the message names the offending key.
    Config(String),
    /// Requested capability is undefined for the generator family.
    Unsupported(String),
    /// Training aborted (diverged or failed to make required progress).
    Training(String),
    /// File I/O failure or corrupt/truncated on-disk artifact.
    Io(String),
}

impl Error {
    /// Process exit code for the CLI.
    ///
    /// 0 is success; 1 verification/runtime failure; 2 configuration error;
    /// 3 I/O or corruption; 4 capability unsupported by the generator family.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 3,
            Error::Unsupported(_) => 4,
            _ => 1,
        }
    }

    /// Shorthand constructor for contract violations.
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Shorthand constructor for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Divergence { step, magnitude } => write!(
                f,
                "integration diverged at step {step}: |state| reached {magnitude:.3e}"
            ),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Unsupported(m) => write!(f, "capability unsupported: {m}"),
            Error::Training(m) => write!(f, "training error: {m}"),
            Error::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
