use std::path::PathBuf;

use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("unknown gene `{0}`")]
    UnknownGene(String),

    #[error("gene `{0}` is not in the input panel")]
    NotInPanel(String),

    #[error("self-pair ({0}, {0}) is not a valid regulatory query")]
    SelfPair(String),

    #[error("{capability} is not supported by the {backend} backend")]
    Unsupported { capability: &'static str, backend: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    #[error("ridge system is singular for target `{target}`; use a ridge strength > 0")]
    Singular { target: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Format { path: path.into(), message: message.to_string() }
    }

    /// True when the failure stems from caller input rather than a broken
    /// internal invariant.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Self::Autodiff(_) | Self::Invariant(_))
    }
}
