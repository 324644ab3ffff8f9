use thiserror::Error;

/// Every fallible operation in the crate returns this.
#[derive(Debug, Error)]
pub enum LantkError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry ({detail}); offending argument {arg}")]
    DegenerateGeometry { arg: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty pair bucket: {0}")]
    EmptyBucket(String),

    #[error("guardrail: {0}")]
    Guardrail(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LantkError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LantkError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        LantkError::Numerical(msg.into())
    }

    pub fn degenerate(arg: usize, detail: impl Into<String>) -> Self {
        LantkError::DegenerateGeometry {
            arg,
            detail: detail.into(),
        }
    }

    /// Validation problems map to 1, numerical trouble to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            LantkError::Numerical(_) | LantkError::DegenerateGeometry { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LantkError>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(LantkError::invalid(format!(
            "{what} contains a non-finite value at flat index {pos}"
        )));
    }
    Ok(())
}
