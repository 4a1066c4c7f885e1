use thiserror::Error;

pub type Result<T> = std::result::Result<T, TpgError>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum TpgError {
    #[error("invalid mode: {mode} for tensor of order {order}")]
    InvalidMode { mode: usize, order: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} scalars, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported version: {0}")]
    UnsupportedVersion(String),

    #[error("degenerate fiber: contraction produced a zero vector")]
    DegenerateFiber,

    #[error("degenerate design: predictor operator is zero")]
    DegenerateDesign,

    #[error("diverged (step size too large): loss became {0}")]
    Diverged(f64),

    #[error("unparseable row {row}: {reason}")]
    UnparseableRow { row: usize, reason: String },

    #[error("missing required column: {0}")]
    MissingColumn(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl TpgError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            TpgError::InvalidArgument(_) => ErrorKind::Usage,
            TpgError::DegenerateFiber | TpgError::DegenerateDesign | TpgError::Diverged(_) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Data,
        }
    }
}

pub(crate) fn mismatch(msg: impl Into<String>) -> TpgError {
    TpgError::DimensionMismatch(msg.into())
}
