use thiserror::Error;

use crate::fnn::TrainHistory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ill-posed fit: {0}")]
    IllPosed(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("rank error: score column {column} has zero sum of squares")]
    Rank { column: usize },

    #[error("non-finite activation in layer {layer}")]
    Numeric { layer: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        history: Box<TrainHistory>,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("document format version {found} is not supported (expected {expected}); re-export the document with this version")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI error record.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::IllPosed(_) => "ill_posed",
            Error::Degenerate(_) => "degenerate_data",
            Error::Data(_) => "data",
            Error::Rank { .. } => "rank",
            Error::Numeric { .. } => "numeric",
            Error::Diverged { .. } => "training_diverged",
            Error::Calibration(_) => "calibration",
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Version { .. } => "version_mismatch",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
