//! Double-lane-change scenarios, the closed control loop, adaptation
//! pipeline, metrics and file output.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod adapt;
pub mod config;
pub mod emit;
pub mod metrics;
pub mod run;
pub mod scenario;

pub use adapt::{baseline_boundaries, boundaries, nominal_boundaries, Adaptation};
pub use config::Config;
pub use metrics::{compare, Comparison, RunMetrics};
pub use run::{run, Boundaries, Mode, RunOutput, TraceRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("plant: {0}")]
    Plant(String),
    #[error("controller: {0}")]
    Control(String),
    #[error("comparison: {0}")]
    Comparison(String),
    #[error("parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Gpr(#[from] crate::gpr::GprError),
    #[error(transparent)]
    Bayes(#[from] crate::bayes::BayesError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, message: impl Into<String>) -> Self {
        Self::Parse { path: path.to_path_buf(), message: message.into() }
    }
}

pub const THREADS_VAR: &str = "ROBUST_TRACK_THREADS";

/// Thread pool sized by `ROBUST_TRACK_THREADS` when set, otherwise by rayon.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_VAR).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|n| *n > 0) {
        builder = builder.num_threads(n);
    }
    builder.build().expect("thread pool")
}

/// One run per seed, fanned out across the pool. Output order follows `seeds`.
pub fn run_seeds(config: &Config, boundaries: &Boundaries, mode: Mode, seeds: &[u64]) -> Result<Vec<RunOutput>, HarnessError> {
    use rayon::prelude::*;
    thread_pool().install(|| seeds.par_iter().map(|s| run(config, boundaries, mode, *s)).collect())
}
