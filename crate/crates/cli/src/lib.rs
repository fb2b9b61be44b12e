//! Configuration, experiment runners and reports behind the `raycontact`
//! binary.

pub mod config;
pub mod experiments;
pub mod registry;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run, Outcome};
pub use report::Report;
