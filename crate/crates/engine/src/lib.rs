//! Assembly of the octaloop engine: configuration, corpus, checkpoints,
//! the `octaloop` command line and the HTTP control service.

pub mod artifacts;
pub mod bench;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod service;
pub mod spectrogram;

pub use config::EngineConfig;
pub use error::{EngineError, Result};
