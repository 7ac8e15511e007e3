//! Batch pipeline around `memos-core`: simulate, mesh, fit, predict, ECC and
//! verify, driven by a flat key-value configuration and leaving a manifest
//! beside every output.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{Method, RunConfig};
pub use error::{CliError, Result};
pub use manifest::Manifest;
pub use pipeline::{Comparison, Report, Run};
