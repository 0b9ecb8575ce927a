//! Error type shared by every module of the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected shape) do not line up.
    #[error("{op}: dimension mismatch: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A scatter/gather index points outside the destination extent.
    #[error("{op}: index {index} out of range for extent {extent} at position {pos:?}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
        pos: Vec<usize>,
    },

    /// Activation segments do not partition the hidden axis.
    #[error("invalid segment layout: {0}")]
    Layout(String),

    /// A bank or model cannot be constructed from the given description.
    #[error("build error: {0}")]
    Build(String),

    /// A training/benchmark configuration value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset contents are inconsistent with what an operation expects.
    #[error("data error: {0}")]
    Data(String),

    /// A cache or gradient buffer does not belong to the object it is used with.
    #[error("state error: {0}")]
    State(String),

    /// A spec file or serialized value could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
