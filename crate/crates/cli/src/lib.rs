//! Batch experiment runner for the shrinker lab.
//!
//! Each experiment is a TOML file ([`config::ExperimentConfig`]); running it
//! writes CSV tables, SVG plots, a `checks.json` of invariant checks and a
//! `manifest.json` with content hashes into its own directory.
//! [`report::emit_report`] folds the checks of many runs into one table.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use config::{ExperimentConfig, Kind};
pub use pipeline::{run_experiment, RunOutcome};

#[derive(Debug, Clone, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(shrinker_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("missing artifacts: {0}")]
    Missing(String),
}

impl From<shrinker_core::Error> for LabError {
    fn from(e: shrinker_core::Error) -> Self {
        // Bad parameters that slipped past the schema are still input errors.
        if e.is_config() {
            LabError::Config(e.to_string())
        } else {
            LabError::Numerical(e)
        }
    }
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Run configs on up to `jobs` worker threads. Results come back in input
/// order.
pub fn run_all(configs: &[ExperimentConfig], out_root: &Path, jobs: usize) -> Vec<Result<RunOutcome, LabError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutcome, LabError>>>> = Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let r = run_experiment(&configs[i], out_root);
                slots.lock().expect("a worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("a worker panicked").into_iter().map(|r| r.expect("every slot is filled")).collect()
}
