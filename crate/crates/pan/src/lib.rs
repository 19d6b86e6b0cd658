//! File formats, synthetic data, benchmarking and CLI support around `pan-core`.

pub mod bench;
pub mod checkpoint;
pub mod clip;
mod error;
pub mod eval;
pub mod export;
pub mod synth;

pub use error::{Error, Result};
