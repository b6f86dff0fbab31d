//! Experiment runner for `prism-core`: configuration files, dataset and
//! checkpoint formats, the evaluated training loop, timing and sweeps.

pub mod config;
pub mod experiment;
pub mod formats;
pub mod sweep;
pub mod timing;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunRecord};
pub use timing::{time_iterations, TimingReport};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] prism_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// `2` for configuration problems, `3` for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}
