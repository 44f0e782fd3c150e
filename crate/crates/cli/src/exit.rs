//! Errors that carry the process exit code.

use std::fmt;

use meta_tta::Error;

pub const USER_ERROR: i32 = 2;
pub const RUNTIME_ERROR: i32 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub err: anyhow::Error,
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    /// Bad input: config, flags, missing files, malformed CSV.
    pub fn user(e: impl fmt::Display) -> Self {
        Self {
            code: USER_ERROR,
            err: anyhow::anyhow!("{e}"),
        }
    }

    /// The inputs were readable but the data could not be used.
    pub fn runtime(e: impl fmt::Display) -> Self {
        Self {
            code: RUNTIME_ERROR,
            err: anyhow::anyhow!("{e}"),
        }
    }

    pub fn context(self, c: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            err: self.err.context(c.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.err)
    }
}

/// Library errors raised while running; parameter problems still count as
/// the user's fault.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParam(_) | Error::EmptyScript | Error::BatchTooSmall(_) | Error::Json(_) => Self::user(e),
            _ => Self::runtime(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}
