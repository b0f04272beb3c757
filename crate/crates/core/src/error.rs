use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("variable {0} is not recorded on this tape")]
    MissingTape(usize),
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("graph contains a cycle: {cycle:?}")]
    Cyclic { cycle: Vec<usize> },
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("matrix is singular: {0}")]
    Singular(String),
    #[error("kernel solve failed ({0}); increase the CMMD regularization")]
    KernelSolve(String),
    #[error("degenerate samples: {0}")]
    Degenerate(String),
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("duplicate intervention on node {0}")]
    DuplicateIntervention(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(
    context: &str,
    expected: impl core::fmt::Debug,
    got: impl core::fmt::Debug,
) -> Error {
    Error::Dimension {
        context: context.into(),
        expected: alloc::format!("{expected:?}"),
        got: alloc::format!("{got:?}"),
    }
}
