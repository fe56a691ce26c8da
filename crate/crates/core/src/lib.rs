//! Quantile-on-quantile regression toolkit for monthly financial series.
//!
//! The crate is organised around the estimation pipeline:
//!
//! - [`ingest`]: loading, aligning and transforming monthly series.
//! - [`stats`]: descriptive statistics, Jarque-Bera, autocorrelation,
//!   correlation matrices and the empirical distribution function.
//! - [`quantreg`]: the weighted check-loss solver behind every fit.
//! - [`qqr`]: kernel-weighted quantile-on-quantile surfaces and their
//!   τ-averages.
//! - [`dfm`]: dynamic factor model estimated by EM with a Kalman smoother,
//!   producing a composite index.
//! - [`bds`]: the BDS test of independence.

pub mod bds;
pub mod dfm;
pub mod format;
pub mod ingest;
pub mod qqr;
pub mod quantreg;
pub mod stats;

mod error;

pub use error::{Error, ErrorCategory};
pub use ingest::{Month, MonthRange, Panel, ReturnSeries, TimeSeries};
pub use quantreg::QuantileLevel;

pub type Result<T> = std::result::Result<T, Error>;
