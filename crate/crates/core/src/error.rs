use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Caller broke an operation's preconditions (mismatched shapes, wrong lengths).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("non-finite {term} loss at iteration {iteration} (view {view})")]
    NonFinite {
        iteration: usize,
        view: usize,
        term: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Contract(_) => "contract_violation",
            Error::Format(_) => "format",
            Error::EmptySelection(_) => "empty_selection",
            Error::Undefined(_) => "undefined",
            Error::NonFinite { .. } => "non_finite_loss",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
