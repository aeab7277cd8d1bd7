use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error(transparent)]
    Core(#[from] defgrid_core::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
    #[error("image is {width}x{height}; the limit is {limit}x{limit}")]
    TooLarge { width: usize, height: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, WorkbenchError>;

impl WorkbenchError {
    /// 1 for problems with the caller's inputs, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkbenchError::Core(e) => core_exit_code(e),
            _ => 1,
        }
    }
}

pub fn core_exit_code(e: &defgrid_core::Error) -> i32 {
    match e {
        defgrid_core::Error::Internal(_) | defgrid_core::Error::NumericFailure { .. } => 2,
        _ => 1,
    }
}
