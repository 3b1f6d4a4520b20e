use std::fmt;

use sprinkle_qo::Error;

/// A command failure with its exit code and a short machine-readable kind.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::LimitExceeded { .. }) => 3,
            Failure::Core(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Core(e) => match e {
                Error::Parse { .. } | Error::Json(_) => "parse",
                Error::LimitExceeded { .. } => "limit",
                Error::FormatVersion { .. }
                | Error::Checksum
                | Error::FingerprintMismatch { .. } => "history",
                Error::Io(_) => "io",
                Error::InconsistentSize { .. }
                | Error::Cycle(_)
                | Error::Dangling(_)
                | Error::UnreachableRoot(_) => "dag",
                _ => "validation",
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
