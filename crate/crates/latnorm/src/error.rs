//! Shared error type and result alias.

use std::path::PathBuf;

/// Errors produced by library operations.
///
/// Variants map onto the CLI exit-code convention: domain and I/O failures
/// exit with 2, accuracy and budget failures with 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input outside an operation's domain: invalid parameters, mismatched
    /// dimensions, malformed configuration.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine could not certify the requested accuracy.  The
    /// best estimate obtained and its error bound are carried along so the
    /// caller can decide whether it is still usable.
    #[error("accuracy error: {message} (best estimate {value:e}, error bound {error_estimate:e})")]
    Accuracy {
        message: String,
        value: f64,
        error_estimate: f64,
    },

    /// A configured work budget (table size, evaluation count) would be
    /// exceeded.
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// File I/O failure, tagged with the offending path.
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn budget(msg: impl Into<String>) -> Self {
        Error::Budget(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 for domain and I/O errors,
    /// 3 for accuracy and budget errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Io { .. } => 2,
            Error::Accuracy { .. } | Error::Budget(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_cli_convention() {
        assert_eq!(Error::domain("x").exit_code(), 2);
        assert_eq!(
            Error::io("/nope", std::io::Error::from(std::io::ErrorKind::NotFound)).exit_code(),
            2
        );
        assert_eq!(
            Error::Accuracy {
                message: "x".into(),
                value: 0.0,
                error_estimate: 1.0
            }
            .exit_code(),
            3
        );
        assert_eq!(Error::budget("x").exit_code(), 3);
    }

    #[test]
    fn messages_carry_the_detail() {
        let e = Error::Accuracy {
            message: "quadrature stalled".into(),
            value: 1.25,
            error_estimate: 1e-3,
        };
        let s = e.to_string();
        assert!(s.contains("quadrature stalled"));
        assert!(s.contains("1.25"));
    }
}
