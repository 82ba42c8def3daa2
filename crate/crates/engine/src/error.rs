use std::path::PathBuf;

use octaloop_core::codec::CodecError;
use octaloop_core::conditioning::ConditioningError;
use octaloop_core::dsp::DspError;
use octaloop_core::generator::GeneratorError;
use octaloop_core::streamer::StreamError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing checkpoint {path}; run `octaloop {verb}` first")]
    MissingCheckpoint { path: PathBuf, verb: &'static str },
    #[error("sink failure: {0}")]
    Sink(String),
    #[error("version mismatch: {0}")]
    Version(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("control service: {0}")]
    Service(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    /// Reserved by the argument parser for usage errors.
    pub const USAGE: u8 = 2;
    pub const INVALID_CONFIG: u8 = 3;
    pub const MISSING_CHECKPOINT: u8 = 4;
    pub const SINK_FAILURE: u8 = 5;
    pub const VERSION_MISMATCH: u8 = 6;
}

impl EngineError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> EngineError {
        let path = path.into();
        move |source| EngineError::Io { path, source }
    }

    pub fn exit_code(&self) -> u8 {
        use EngineError as E;
        match self {
            E::Config(_) => exit::INVALID_CONFIG,
            E::MissingCheckpoint { .. } => exit::MISSING_CHECKPOINT,
            E::Sink(_) | E::Stream(StreamError::Sink(_)) => exit::SINK_FAILURE,
            E::Version(_)
            | E::Codec(CodecError::VersionMismatch { .. })
            | E::Generator(GeneratorError::VersionMismatch { .. } | GeneratorError::CodebookMismatch { .. })
            | E::Stream(StreamError::Generator(GeneratorError::CodebookMismatch { .. })) => exit::VERSION_MISMATCH,
            E::Stream(StreamError::Plan(_)) | E::Generator(GeneratorError::Config(_)) => exit::INVALID_CONFIG,
            _ => exit::FAILURE,
        }
    }
}
