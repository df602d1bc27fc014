use thiserror::Error;

/// Crate-wide error type. Every fallible public entry point returns
/// `Result<T, Error>`; nothing panics on bad input.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operation was asked to combine incompatible shapes.
    /// `detail` always spells out the expected and offered dimensions.
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Failure reading or writing a file.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A text format (clip file, embedding file, schedule, config) failed to
    /// parse. `line` is 1-based; 0 means the error is not tied to a line.
    #[error("{what} parse error at line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    /// Structurally valid input with invalid content (wrong dimension count,
    /// out-of-range value, mismatched checkpoint, ...).
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
