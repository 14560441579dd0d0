//! Trajectory forecasting for workers and moving obstacles in tracked video
//! scenes.
//!
//! The crate bundles the full pipeline around two transformer forecasting
//! models with a graph-attention social module:
//!
//! - [`trackio`] — track-file parsing, pixel→world homography calibration,
//!   sliding-window dataset construction, temporal splits.
//! - [`tensor`] / [`tape`] / [`optim`] — a small dense-tensor engine with
//!   reverse-mode autodiff, Adam, and the warmup learning-rate schedule.
//! - [`model`] — the worker-only and obstacle-aware model variants.
//! - [`training`] — L2 loss, the optimization loop, checkpoints, and
//!   transfer initialization.
//! - [`evaluation`] — ADE/FDE metrics, knowledge-based baselines, and
//!   comparison tables.
//! - [`analysis`] — walking-speed statistics and plot emission.
//! - [`synth`] — seeded synthetic scene generation for desk-scale runs.
//!
//! The `trajgatformer` binary wires these into `calibrate`, `ingest`,
//! `train`, `eval`, `analyze`, and `synth` subcommands; the `examples/`
//! directory has one runnable example per capability.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trackio;
pub mod training;

pub use error::{Error, Result};

use std::path::Path;

/// Write a file via a temporary sibling and rename, so failures never leave
/// a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        if !dir.exists() {
            return Err(Error::io(
                path.display().to_string(),
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("directory {} does not exist", dir.display()),
                ),
            ));
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}
