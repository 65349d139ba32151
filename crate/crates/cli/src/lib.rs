//! Experiment pipeline for the reconstruction encoder-decoder variants:
//! corpus generation, grid training, evaluation and the claim report.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use checkpoint::Checkpoint;
pub use config::{Cell, RunConfig};
pub use error::{CliError, Result};
pub use pipeline::Pipeline;
