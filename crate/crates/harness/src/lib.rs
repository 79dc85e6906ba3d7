//! Everything behind the `cellroute` command line tool: run configuration,
//! checkpoints, metrics, the training loop and the experiment drivers.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod experiments;
pub mod metrics;
pub mod ppm;
pub mod regions;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::RunConfig;
pub use eval::evaluate;
pub use metrics::{Metrics, Summary};
pub use train::{train, TrainOptions, TrainingLog};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config line {line}, key '{key}': {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },
    #[error("STRC checkpoint: {0}")]
    Checkpoint(String),
    #[error("training log: {0}")]
    Log(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] cellroute::Error),
    #[error(transparent)]
    Flatland(#[from] cellroute_flatland::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
