use thiserror::Error;

/// Errors raised across the simulator and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible density: {0}")]
    InfeasibleDensity(String),

    /// An edge whose success probability is zero cannot be compensated by the
    /// channel-aware design (the coefficient would be infinite).
    #[error("degenerate link ({0}, {1}): zero success probability")]
    DegenerateLink(usize, usize),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
