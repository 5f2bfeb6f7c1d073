//! Experiment configuration, the simulate → average → learn → report
//! pipeline, and parameter sweeps behind the `stepeql` command.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod svg;
pub mod sweep;

pub use config::{preset, ExperimentConfig, PRESETS};
pub use error::{HarnessError, Result};
pub use pipeline::{learn, Learned, Workspace};
pub use sweep::{run_sweep, SweepConfig, SweepParam, SweepRow};
