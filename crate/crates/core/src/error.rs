use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps onto one of the process exit codes used by the CLI
/// (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (depth {0:e})")]
    BehindCamera(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("topology mismatch: {pred} vs {gt} vertices")]
    TopologyMismatch { pred: usize, gt: usize },
    #[error("no valid texel around uv ({u}, {v})")]
    InvalidSample { u: f64, v: f64 },
    #[error("degenerate blended transform (determinant {0:e})")]
    DegenerateTransform(f64),
    #[error("no valid texels")]
    NoValidTexels,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::DegenerateTransform(_) | Error::Degenerate(_) => 4,
            _ => 3,
        }
    }
}
