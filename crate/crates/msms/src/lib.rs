//! File formats, pipeline stages, CLI and listening-test service of the MSMS
//! TTS laboratory, on top of the numerical core in `msms-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod fsutil;
pub mod pipeline;
pub mod ratings;
pub mod server;
pub mod wav;
pub mod workspace;

pub use error::{Error, Result};
