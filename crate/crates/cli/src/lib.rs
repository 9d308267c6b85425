//! Library side of the `metarl` command: config schema, stage execution
//! and reporting.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{AlgorithmKind, MetaMethod, RunConfig, Stage, TestSet};
pub use pipeline::{run, run_config_file, sha256_hex, Manifest};
pub use report::{cmd_report, cmd_surface};
