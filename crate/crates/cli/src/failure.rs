use std::fmt;

use roadmix::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
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
        let code = match e {
            Error::UnknownTerm(_)
            | Error::InvalidSpec(_)
            | Error::DegenerateSplit { .. }
            | Error::InvalidConfig(_)
            | Error::NegativeVariance(_)
            | Error::UnsupportedOrder(_)
            | Error::EmptyComparison
            | Error::DimensionMismatch { .. } => EXIT_USAGE,
            Error::NotConverged => EXIT_NOT_CONVERGED,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
