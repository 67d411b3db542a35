use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration rejected: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] tfbm_rough::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    /// 2 for rejected configurations, 3 for numeric or output failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;
