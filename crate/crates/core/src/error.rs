use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("density matrix is not physical: {0}")]
    NonPhysical(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input streams must be sorted by timestamp ({0})")]
    Unsorted(&'static str),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(&'static str),

    #[error("measurement settings are not informationally complete (rank {0} < 16)")]
    RankDeficient(usize),

    #[error("simulation would produce about {0} events, above the 2^32 limit")]
    TooManyEvents(u64),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { location: location.into(), message: message.into() }
    }
}
