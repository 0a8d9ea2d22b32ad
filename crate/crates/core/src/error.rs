use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scale too large for image: r = {r} needs at least {need}x{need}, got {height}x{width}")]
    ScaleTooLarge {
        r: usize,
        need: usize,
        height: usize,
        width: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("could not place a {class} shape inside a {size}x{size} image after {attempts} attempts")]
    Placement {
        class: String,
        size: usize,
        attempts: usize,
    },

    #[error("class '{class}' has {count} items, needs more than {shots} for an {shots}-shot split")]
    ClassTooSmall {
        class: String,
        count: usize,
        shots: usize,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for failures caused by non-finite values during optimisation.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}
