use std::path::PathBuf;

/// Errors raised across the decoding pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported sample rate {rate_hz} Hz: {reason}")]
    UnsupportedRate { rate_hz: f64, reason: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("filter design error: {0}")]
    Design(String),

    #[error("shape error: {op} got {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): {detail}")]
    Divergence {
        epoch: usize,
        learning_rate: f64,
        detail: String,
    },

    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("model load error: {0}")]
    Load(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for errors caused by bad user input (as opposed to pipeline failures).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::Integrity(_) | Error::Config(_) | Error::Io { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
