use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("car at ({x:.2}, {y:.2}) lies outside the layout bounds")]
    OutOfBounds { x: f64, y: f64 },

    #[error("no feasible path on any cost map")]
    NoPath,

    #[error("policy failed at t={time:.2}s: {message}")]
    Policy { time: f64, message: String },

    #[error("training step produced a non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("trace format error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code grouping errors by category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::TomlDe(_) | Error::TomlSer(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) | Error::Trace(_) => 3,
            Error::OutOfBounds { .. } | Error::NoPath | Error::Policy { .. } => 4,
            Error::NonFiniteLoss(_) => 5,
        }
    }
}
