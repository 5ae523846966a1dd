//! Experiment pipelines and the `mpcc` command-line tool.

pub mod bench;
pub mod blockfile;
pub mod config;
pub mod error;
pub mod image;
pub mod meter;
pub mod pipeline;
pub mod plot;
pub mod scene;

pub use config::Config;
pub use error::{CliError, Result};
