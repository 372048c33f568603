use thiserror::Error;

use crate::oculomotor::PolicyParams;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("answer shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate chart: {0}")]
    DegenerateChart(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at batch {batch}: {reason}")]
    Training {
        batch: usize,
        reason: String,
        last_good: Box<PolicyParams>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("external service error: {0}")]
    Service(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
