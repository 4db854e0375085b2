use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("learner diverged at step {step}: {what}")]
    Diverged { step: usize, what: &'static str },

    #[error("config field `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("empty record set")]
    Empty,

    #[error("session log: {0}")]
    SessionLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
