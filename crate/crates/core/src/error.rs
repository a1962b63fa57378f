use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid radar configuration: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("unsupported Hadamard order {0}: must be 1 or a power of two")]
    UnsupportedOrder(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("processing error: {0}")]
    Processing(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("raw frame format error: {0}")]
    Format(String),

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Scene(_) | Error::Parse(_) | Error::UnsupportedOrder(_) => 2,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
