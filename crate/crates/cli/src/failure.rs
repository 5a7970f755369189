//! Error classification into exit codes.

use altboot::Error;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct DataError(pub String);

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn data_err(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

/// Error kind and exit code: 2 config, 3 data, 4 runtime.
pub fn classify(err: &anyhow::Error) -> (&'static str, i32) {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return ("config", 2);
        }
        if cause.is::<DataError>() {
            return ("data", 3);
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidArgument(_) => ("config", 2),
                e if e.is_data_error() => ("data", 3),
                _ => ("runtime", 4),
            };
        }
    }
    ("runtime", 4)
}
