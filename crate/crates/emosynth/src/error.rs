//! Error types shared across the toolkit.
//!
//! Two families matter to callers: user-facing input problems
//! ([`Error::InvalidArgument`], [`Error::Io`], [`Error::Corrupt`]) and
//! endpoint problems ([`Error::Gateway`], [`Error::Protocol`]). The CLI maps
//! the first family to exit code 1 and the second to exit code 2.
//! [`Error::StageEmpty`] is a per-unit condition: long runs journal it and
//! keep going instead of aborting.

use crate::stage::Stage;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller supplied an input that violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A persisted record could not be decoded. `line` is 1-based.
    #[error("corrupt record in {path} at line {line}: {detail}")]
    Corrupt { path: PathBuf, line: usize, detail: String },

    /// A stage reply parsed to nothing usable. Runs journal and skip these.
    #[error("stage {stage} produced no usable output: {detail}")]
    StageEmpty { stage: Stage, detail: String },

    /// Transport-level failure surviving the retry budget. `attempts` counts
    /// every try made, so retries = attempts - 1.
    #[error("gateway failure after {attempts} attempt(s): {detail}")]
    Gateway { attempts: u32, detail: String },

    /// The endpoint answered, but not in the shape the protocol promises.
    /// `payload` carries (a prefix of) the raw body for diagnosis.
    #[error("protocol error: {detail}")]
    Protocol { detail: String, payload: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn protocol(detail: impl Into<String>, payload: impl Into<String>) -> Self {
        let mut payload = payload.into();
        const CAP: usize = 2048;
        if payload.len() > CAP {
            let mut end = CAP;
            while !payload.is_char_boundary(end) {
                end -= 1;
            }
            payload.truncate(end);
        }
        Error::Protocol { detail: detail.into(), payload }
    }

    /// True for the input-problem family (CLI exit code 1).
    pub fn is_user_error(&self) -> bool {
        matches!(self, Error::InvalidArgument(_) | Error::Io { .. } | Error::Corrupt { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gateway_message_carries_attempts() {
        let err = Error::Gateway { attempts: 3, detail: "connection refused".into() };
        assert!(err.to_string().contains("3 attempt(s)"));
    }

    #[test]
    fn protocol_payload_is_capped_on_char_boundary() {
        let payload = "é".repeat(4096);
        let err = Error::protocol("bad body", payload);
        match err {
            Error::Protocol { payload, .. } => assert!(payload.len() <= 2048),
            _ => unreachable!(),
        }
    }
}
