//! Everything around [`stacca_core`] that needs an operating system:
//! configuration files, edge-list and checkpoint formats, metric logs, the
//! training driver, the evaluation harness, the ablation grid and the CLI.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod harness;
pub mod io;
pub mod run;

pub use error::{Error, Result};
