//! Error type shared by every core module.

/// Errors produced by mask construction, loss evaluation, tracking, and
/// attack loops.
///
/// All validation is strict: any non-finite intermediate or shape mismatch
/// aborts the computation instead of propagating garbage downstream.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two arrays that must agree element-wise have different shapes.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    /// A scalar parameter is outside its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// A buffer holds values outside the domain its type promises.
    #[error("invalid value in {context}: {reason}")]
    InvalidValue { context: &'static str, reason: String },

    /// An operation that needs at least one object pixel got an empty mask.
    #[error("empty mask in {context}")]
    EmptyMask { context: &'static str },

    /// Tracker state and frame geometry disagree.
    #[error("frame shape {got:?} does not match tracker geometry {expected:?}")]
    FrameGeometry {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// Gradient computation produced a non-finite entry.
    #[error("non-finite gradient at frame iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    /// Training failed to make progress or produced non-finite weights.
    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    /// Weight (de)serialization failed.
    #[error("weight file error: {0}")]
    WeightIo(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::WeightIo(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
