//! Scenario files, the Monte Carlo runner, CSV output and the built-in catalog.

pub mod catalog;
pub mod config;
pub mod csv;
pub mod runner;

pub use config::{load_config, parse_config, Algorithm, AlgorithmRun, Experiment, ScenarioConfig};
pub use csv::{emit_csv, parse_csv, render_csv};
pub use runner::{run_scenario, AlgorithmResult, ScenarioResult};
