use std::path::PathBuf;
use thiserror::Error;

/// Errors produced anywhere in the feature pipeline.
#[derive(Debug, Error)]
pub enum TafError {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: schema error: {msg}")]
    Schema {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient keyframes: {0}")]
    InsufficientKeyframes(String),

    #[error("segmentation error: {0}")]
    Segmentation(String),

    #[error("mask coverage error: {0}")]
    Coverage(String),

    #[error("mask gap error: {0}")]
    Gap(String),

    #[error("mask format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error in {layer}: {msg}")]
    Numeric { layer: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl TafError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TafError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            TafError::Parameter(_) | TafError::Config(_) => 2,
            TafError::Numeric { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, TafError>;
