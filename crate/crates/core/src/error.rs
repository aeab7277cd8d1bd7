use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate cell {cell}: |signed area| <= 1e-9")]
    DegenerateCell { cell: usize },

    /// Cells whose signed area is not positive (or below the caller's floor).
    #[error("invalid grid: {} cell(s) with non-positive area, first {:?}", .cells.len(), .cells.first())]
    InvalidGrid { cells: Vec<usize> },

    #[error("offsets would flip cell(s) {cells:?}")]
    FlippedCells { cells: Vec<usize> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("non-finite gradient at iteration {iteration}")]
    NumericFailure { iteration: usize },

    #[error("mask has no boundary pixel")]
    NoBoundary,

    #[error("seeds snapped to fewer distinct vertices than required ({found} < {required})")]
    DegenerateSeeds { found: usize, required: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dims_mismatch(expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch { expected: expected.to_string(), found: found.to_string() }
}
