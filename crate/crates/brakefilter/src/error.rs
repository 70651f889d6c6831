//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input value is outside the physical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// A mixture component could not be kept positive-definite even after
    /// regularization (e.g. heavily duplicated data).
    #[error("degenerate component {component}: {reason}")]
    DegenerateComponent { component: usize, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular covariance block in component {component}")]
    SingularMatrix { component: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("timestamps not strictly increasing at line {line}")]
    Monotonicity { line: u64 },

    #[error("length mismatch: {labels} labels vs {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },

    /// A classification rate whose denominator is zero. The caller decides
    /// the policy; nothing is silently substituted.
    #[error("{metric} undefined: {denominator} is zero")]
    UndefinedMetric {
        metric: &'static str,
        denominator: &'static str,
    },

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("at tick {tick}: {source}")]
    AtTick {
        tick: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("in fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_tick(self, tick: usize) -> Self {
        Error::AtTick {
            tick,
            source: Box::new(self),
        }
    }

    pub fn in_fold(self, fold: usize) -> Self {
        Error::InFold {
            fold,
            source: Box::new(self),
        }
    }
}
