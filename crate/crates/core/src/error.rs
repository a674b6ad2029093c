use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its contract. `key` names the offending
    /// setting using the dotted path of the configuration file.
    #[error("{key}: {reason}")]
    Config { key: String, reason: String },

    #[error("invalid segment spec: {0}")]
    InvalidSegment(String),

    #[error("bandwidth estimator has no observations yet")]
    ColdStart,

    #[error("estimated bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("empty reward window")]
    EmptyWindow,

    #[error("reward histories: {0}")]
    History(String),

    #[error("unknown scenario `{name}`; available: {}", catalog.join(", "))]
    UnknownScenario {
        name: String,
        catalog: Vec<&'static str>,
    },

    #[error("malformed log at row {row}: {reason}")]
    MalformedLog { row: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}
