//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OmniError {
    #[error("{field} = {value} is outside {expected}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty data: {0}")]
    EmptyData(&'static str),
    #[error("covariate dimension {got} is not supported (expected {expected})")]
    UnsupportedDimension { got: usize, expected: usize },
    #[error("covariate {0:?} has no entry in the lookup table")]
    UnseenCovariate(Vec<f64>),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OmniError {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            OmniError::Numeric(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, OmniError>;

pub(crate) fn check_unit(field: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(OmniError::OutOfRange {
            field,
            value,
            expected: "[0, 1]",
        })
    }
}
