use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by tensor primitives, graphs and the training loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}` (expected {expected}, got {actual})")]
    Dimension { op: &'static str, axis: &'static str, expected: usize, actual: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("invalid shift kernel size {0}: must be odd and >= 3")]
    InvalidKernel(usize),
    #[error("split point {first} out of range for {channels} channels")]
    SplitOutOfRange { first: usize, channels: usize },
    #[error("training diverged at iteration {iter}: loss = {loss}")]
    TrainingDiverged { iter: usize, loss: f32 },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f32),
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("unsupported ShiftResNet depth {0} (expected 20 or 56)")]
    UnsupportedDepth(usize),
    #[error("graph: {0}")]
    Graph(String),
    #[error("config: {0}")]
    Config(String),
    #[error("state: {0}")]
    State(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension { op, axis, expected, actual }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}
