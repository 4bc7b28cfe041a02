//! Experiment configuration, CSV emission, and the method dispatcher behind
//! the CLI. Config files are flat `key = value` text with dotted section
//! prefixes; outputs are plot-ready CSVs plus a `key = value` run manifest.

pub mod config;
pub mod csv;
pub mod runner;

pub use config::{BackendChoice, ExperimentConfig, Method, MethodConfig};
pub use runner::{run, RunReport};
