//! Library side of the `seqdetect` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod grid;

pub use commands::{run_bounds, run_study, Manifest, RunOutput};
pub use config::{Overrides, Preset, StudyFile};
pub use error::CliError;
