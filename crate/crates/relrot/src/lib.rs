//! Filesystem side of the relative-rotation toolkit: dataset manifests and
//! PNG images, checkpoints, metrics files, figures, the run report and the
//! `relrot` command line. Everything numerical lives in `relrot-core`.

pub mod analyze;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod imageio;
pub mod manifest;
pub mod metrics;
pub mod plot;
pub mod report;
pub mod run;
pub mod toy;

pub use error::{AppError, Result};
