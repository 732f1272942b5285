use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpmError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("solution blew up at t = {time:.6e}: max |u| = {max_velocity:.3e} exceeds {bound:.3e}")]
    BlowUp {
        time: f64,
        max_velocity: f64,
        bound: f64,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("data format error: {0}")]
    Format(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DpmError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            DpmError::BlowUp { .. } => 3,
            _ => 2,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            DpmError::InvalidGrid(_) => "grid",
            DpmError::Shape(_) => "shape",
            DpmError::InvalidArgument(_) => "argument",
            DpmError::BlowUp { .. } => "blowup",
            DpmError::Config(_) => "config",
            DpmError::Format(_) => "format",
            DpmError::MissingData(_) => "missing_data",
            DpmError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, DpmError>;
