use thiserror::Error;

/// Errors produced anywhere in the codec library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimension {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("training error in {component}: {message}")]
    Training { component: String, message: String },
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("range coder error: {0}")]
    Coder(String),
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(expected: &[usize], actual: &[usize]) -> Self {
        Error::Dimension {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
