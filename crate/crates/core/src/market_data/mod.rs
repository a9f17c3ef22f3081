//! Price and returns data model, CSV ingestion and synthetic universes.
//!
//! A [`PriceFrame`] is a dense `T x M` matrix of strictly positive prices
//! indexed by dates; [`ReturnsFrame`] holds the `(T - 1) x M` gross, simple or
//! log returns derived from it. Both are immutable after construction.

mod aaft;
mod csv_io;
mod frame;
mod portfolio;
mod universe;
mod waves;

pub use aaft::{aaft_column, aaft_prices, aaft_surrogate, AaftColumn};
pub use csv_io::{load_csv, write_csv, CsvConfig};
pub use frame::{portfolio_returns, to_returns, PriceFrame, ReturnsFrame, ReturnsKind};
pub use portfolio::PortfolioVector;
pub use universe::{Generator, UniverseSpec, WaveParams};
pub use waves::gen_waves;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MarketDataError>;
