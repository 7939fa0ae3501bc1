use std::fmt;
use std::path::Path;

use redcore::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Property = 1,
    Config = 2,
    Io = 3,
}

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: Code::Config,
            message: msg.into(),
        }
    }

    pub fn property(msg: impl Into<String>) -> Self {
        Failure {
            code: Code::Property,
            message: msg.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Failure {
            code: Code::Io,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_) => Code::Io,
            Error::Config(_) | Error::Label { .. } | Error::DegenerateModality(_) | Error::Domain(_) => Code::Config,
            Error::InvalidTensor(_) | Error::Shape(_) | Error::AbsentInBatch(_) => Code::Property,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}
