//! Error type carrying the process exit code.

use std::fmt;

use slowmodes::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    /// Prefix the message with where it happened.
    pub fn context(self, what: &str) -> Self {
        Self {
            code: self.code,
            message: format!("{what}: {}", self.message),
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
            Error::InvalidGrid(_)
            | Error::InvalidArgument(_)
            | Error::ShapeMismatch { .. }
            | Error::EmptyDataset { .. }
            | Error::TooManyModes { .. }
            | Error::TooFewPoints { .. } => EXIT_CONFIG,
            Error::Io(_) | Error::Parse(_) => EXIT_IO,
            Error::NotRowStochastic { .. }
            | Error::Reducible
            | Error::NotReversible { .. }
            | Error::NoConvergence
            | Error::NonFinite(_)
            | Error::IllConditioned
            | Error::NotSymmetrized
            | Error::RankDeficient
            | Error::TrainingAborted { .. }
            | Error::ZeroNorm => EXIT_NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let abort = Failure::from(Error::TrainingAborted {
            epoch: 3,
            batch: 7,
            loss: f64::NAN,
        });
        assert_eq!(abort.code, EXIT_NUMERIC);
        assert!(abort.message.contains("epoch 3") && abort.message.contains("batch 7"));
        assert_eq!(Failure::from(Error::TooFewPoints { requested: 5, available: 2 }).code, EXIT_CONFIG);
        assert_eq!(Failure::from(Error::Parse("x".into())).code, EXIT_IO);
    }
}
