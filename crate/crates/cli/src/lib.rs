//! Stage orchestration for the occupancy-trend experiment.

pub mod chart;
pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod pipeline;

pub use config::{GroupBy, ModeSelection, Overrides, PipelineConfig};
pub use error::CliError;
pub use pipeline::{Pipeline, StageOutcome};
