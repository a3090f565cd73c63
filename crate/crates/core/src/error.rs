use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("optimisation diverged at iteration {iteration}: loss = {loss}")]
    Diverged {
        iteration: usize,
        loss: f64,
        trace: Vec<f64>,
    },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI contract (2 config, 3 numeric, 4 I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } | LabError::Unsupported(_) | LabError::Domain(_) => 2,
            LabError::Shape(_) => 2,
            LabError::Io { .. } => 4,
            LabError::DegenerateBasis(_)
            | LabError::DegenerateGeometry(_)
            | LabError::Numeric(_)
            | LabError::Diverged { .. } => 3,
        }
    }
}
