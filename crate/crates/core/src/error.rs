use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// WAV decoding failures. Each unsupported property gets its own variant so
/// callers never mistake a format mismatch for corruption.
#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported sample rate {0} (expected 16000)")]
    UnsupportedSampleRate(u32),
    #[error("unsupported channel count {0} (expected mono)")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth {0} (expected 16-bit PCM)")]
    UnsupportedBitDepth(u16),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },

    /// Binary or text file that does not follow its declared layout.
    #[error("{context}: {msg}")]
    Format { context: String, msg: String },

    /// A configuration key is missing, unknown, or out of range.
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// Precondition violation on an operation's arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The data is well-formed but numerically degenerate (zero energy,
    /// single-class labels, zero cohort spread, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            msg: msg.into(),
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io { .. } | Error::Wav { .. } | Error::Format { .. } | Error::InvalidInput(_) => 3,
            Error::Degenerate(_) => 4,
        }
    }
}
