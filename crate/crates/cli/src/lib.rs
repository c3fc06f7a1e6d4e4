//! Experiment runner for critical-window studies of Gaussian-mixture
//! diffusions: configuration, builtin recipes, CSV/SVG artifacts and run
//! manifests.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod recipes;
pub mod svg;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
pub use experiments::{execute, run, Artifacts};
