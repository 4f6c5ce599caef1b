//! File formats, dataset generation and run orchestration around
//! `codial-core`.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod runs;
pub mod synthetic;

pub use error::{CliError, Result};
