use std::path::PathBuf;

/// Errors produced by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config file not found: {0}")]
    MissingConfig(PathBuf),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("malformed config line {line}: {text:?}")]
    MalformedLine { line: usize, text: String },

    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ack reported on channel {channel} without a transmission")]
    AckWithoutTransmission { channel: usize },

    #[error("history streams misaligned: {actions} actions, {observations} observations, {loads} load vectors")]
    MisalignedHistory {
        actions: usize,
        observations: usize,
        loads: usize,
    },

    #[error("instance too large to enumerate: {profiles} profiles (limit {limit})")]
    TooLarge { profiles: u128, limit: u128 },

    #[error("strategy of user {user} is not a probability vector (sum {sum})")]
    InvalidStrategy { user: usize, sum: f64 },

    #[error("snapshot parse error at line {line}: {reason}")]
    Snapshot { line: usize, reason: String },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}
