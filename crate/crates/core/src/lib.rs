//! Sequential portfolio-management laboratory: market data, metrics, static
//! optimizers, a small reverse-mode autodiff engine, a backtest environment
//! and model-based and model-free trading agents.

pub mod agents;
pub mod cli;
pub mod env;
pub mod market_data;
pub mod metrics;
pub mod optimizer;
pub mod pretrain;
pub mod rng;
pub mod tensor;

use thiserror::Error;

/// Error type for operations spanning several modules (episodes, training,
/// experiment runs).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    MarketData(#[from] market_data::MarketDataError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Optimizer(#[from] optimizer::OptimizerError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Env(#[from] env::EnvError),
    #[error("agent error: {0}")]
    Agent(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.as_ref().display().to_string();
    move |source| Error::Io { path, source }
}
