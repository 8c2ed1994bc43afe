use thiserror::Error;

/// Errors shared across the library.
#[derive(Error, Debug)]
pub enum GhmError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("noise variance must be positive, got {0}")]
    InvalidNoise(f64),

    #[error("the root node has no siblings")]
    RootHasNoSiblings,

    #[error("enumeration would require {required} configurations, limit is {limit}")]
    EnumerationLimit { required: f64, limit: u64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("numeric blowup in SDE simulation at step {step}")]
    SdeBlowup { step: usize },

    #[error("missing message function for {0}")]
    MissingMessageFn(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iteration}: risk {risk} exceeds 10x initial {initial}")]
    Divergence {
        iteration: usize,
        risk: f64,
        initial: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GhmError>;
