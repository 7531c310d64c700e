use std::fmt;
use std::io;

use cloudatelier_core::collab::ConfigError;
use cloudatelier_core::{CollabError, IndexError, IngestError, MeasureError, SegmentError};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// A failure reported as `ERROR <code>: <detail>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub detail: String,
    pub exit: i32,
}

impl CliError {
    pub fn usage(detail: impl Into<String>) -> Self {
        CliError {
            code: "Usage".into(),
            detail: detail.into(),
            exit: EXIT_USAGE,
        }
    }

    pub fn data(code: &str, detail: impl fmt::Display) -> Self {
        let exit = if code == "IO" || code == "OutOfDiskSpace" {
            EXIT_IO
        } else {
            EXIT_DATA
        };
        CliError {
            code: code.into(),
            detail: single_line(&detail.to_string()),
            exit,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ERROR {}: {}", self.code, self.detail)
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::data("IO", e)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::data(e.code(), e)
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        CliError::data(e.code(), e)
    }
}

impl From<SegmentError> for CliError {
    fn from(e: SegmentError) -> Self {
        CliError::data(e.code(), e)
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        CliError::data(e.code(), e)
    }
}

impl From<CollabError> for CliError {
    fn from(e: CollabError) -> Self {
        CliError::data(e.code(), e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(e) => e.into(),
            ConfigError::Invalid(d) => CliError::data("InvalidConfig", d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        let io: CliError = io::Error::new(io::ErrorKind::NotFound, "gone").into();
        assert_eq!((io.exit, io.code.as_str()), (EXIT_IO, "IO"));
        let data: CliError = IndexError::EmptySource.into();
        assert_eq!(data.exit, EXIT_DATA);
        assert_eq!(CliError::usage("x").exit, EXIT_USAGE);
        let multi = CliError::data("X", "a\nb");
        assert_eq!(multi.to_string(), "ERROR X: a b");
    }
}
