use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tensor holds non-finite values or its shape disagrees with its data.
    InvalidTensor {
        name: String,
        reason: String,
    },
    /// Two parameter sets (or a parameter set and an input) disagree on names or shapes.
    ShapeMismatch {
        name: String,
        detail: String,
    },
    /// Mixture weights violate the simplex invariants or do not match the ingredient count.
    BadWeights(String),
    Unsupported(String),
    /// A loss or objective became non-finite.
    Diverged {
        step: usize,
    },
    BatchTooSmall {
        got: usize,
        need: usize,
    },
    TooFewRefs {
        got: usize,
        need: usize,
    },
    LengthMismatch {
        left: usize,
        right: usize,
    },
    NotSquare {
        dim: usize,
    },
    EmptySplit,
    EvalFailed(String),
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { name: name.into(), detail: detail.into() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidTensor { name, reason } => write!(f, "invalid tensor `{name}`: {reason}"),
            Error::ShapeMismatch { name, detail } => write!(f, "shape mismatch at `{name}`: {detail}"),
            Error::BadWeights(msg) => write!(f, "bad mixture weights: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::Diverged { step } => write!(f, "non-finite loss at step {step}"),
            Error::BatchTooSmall { got, need } => {
                write!(f, "batch too small: {got} rows, need at least {need}")
            }
            Error::TooFewRefs { got, need } => {
                write!(f, "too few reference rows: {got}, need at least {need}")
            }
            Error::LengthMismatch { left, right } => write!(f, "length mismatch: {left} vs {right}"),
            Error::NotSquare { dim } => write!(f, "input dimension {dim} is not a perfect square"),
            Error::EmptySplit => f.write_str("empty split"),
            Error::EvalFailed(msg) => write!(f, "evaluation failed: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
