//! Scenario configuration, the run engine, run comparison and artifacts.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod scenarios;
pub mod world;

pub use artifacts::{read_run, write_run, LoadedRun, RunMeta};
pub use compare::{compare, ComparisonReport, CompareError};
pub use config::{ConfigError, Mode, ScenarioConfig};
pub use world::{run_scenario, RunOptions, RunOutput};
