//! Error type shared by every pipeline stage.
//!
//! Variants are grouped into three categories that map onto process exit
//! codes: configuration problems (bad parameters), data problems (missing
//! files, malformed rows, degenerate datasets), and numeric failures
//! (singular matrices, non-finite values).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("missing column `{column}` in `{path}`")]
    MissingColumn { path: String, column: String },

    #[error("cannot parse `{value}` in column `{column}`, row {row}")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("timestamp decreases at row {row}")]
    TimestampOrder { row: usize },

    #[error("non-finite value in column `{column}`, row {row}")]
    NonFiniteValue { row: usize, column: String },

    #[error("non-positive price {value} at row {row}")]
    NonPositivePrice { row: usize, value: f64 },

    #[error("unexpected column `{column}` in `{path}`")]
    UnexpectedColumn { path: String, column: String },

    #[error("insufficient data: need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("dataset has no labels")]
    Unlabeled,

    #[error("class {class} absent from labeled dataset")]
    ClassMissing { class: u8 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {context}")]
    EmptyInput { context: &'static str },

    #[error("numeric failure: {reason}")]
    Numeric { reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn numeric(reason: impl Into<String>) -> Self {
        Error::Numeric {
            reason: reason.into(),
        }
    }

    pub fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Process exit code for the CLI: 1 config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } => 1,
            Error::Numeric { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
