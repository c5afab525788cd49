use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid must be at least 2x2, got {rows}x{cols}")]
    DimensionTooSmall { rows: usize, cols: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("triangle {0} has zero area")]
    DegenerateTriangle(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("depth comparison has an empty region of interest")]
    EmptyRoi,
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("non-finite gradient produced by node {node} ({op})")]
    NonFiniteGradient { node: usize, op: &'static str },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("optimization diverged: {0}")]
    Diverged(String),
    #[error("schema violation in {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionTooSmall { .. } => "dimension-too-small",
            Error::InvalidMesh(_) => "invalid-mesh",
            Error::DegenerateTriangle(_) => "degenerate-triangle",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::Empty(_) => "empty-input",
            Error::EmptyRoi => "empty-roi",
            Error::Solve(_) => "solver-failure",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::NonFinite(_) => "non-finite-value",
            Error::Diverged(_) => "diverged",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
