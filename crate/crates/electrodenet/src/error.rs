use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("expected 16000 Hz mono audio, got {got} Hz, {channels} channel(s) in {path}")]
    SampleRate {
        got: u32,
        channels: u16,
        path: String,
    },
    #[error("file format error: {0}")]
    Format(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("score pairing mismatch: {0}")]
    PairingMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
