//! Forecast-then-detect anomaly detection for univariate time series.
//!
//! The crate is organised bottom-up:
//!
//! - [`timeseries`]: NAB-format ingestion, anomaly windows, temporal splits.
//! - [`preprocess`]: missing-value repair, z-score normalisation, period
//!   detection and STL decomposition.
//! - [`optim`]: Nelder-Mead, Adam, gradient clipping and early stopping.
//! - [`classical`]: additive Holt-Winters and seasonal ARIMA (CSS + AIC).
//! - [`lstm`]: a stacked LSTM forecaster with hand-written BPTT.
//! - [`detect`]: residual thresholding (z-test, Gaussian likelihood,
//!   percentile, IQR).
//! - [`metrics`]: forecasting and detection metrics, DTW and ROC AUC.
//! - [`pipeline`]: per-dataset pipeline and the batch runner that writes the
//!   aggregate CSV reports.

pub mod classical;
pub mod detect;
mod error;
mod stats;
#[cfg(test)]
mod testutil;
pub mod lstm;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod preprocess;
pub mod timeseries;

pub use error::{Error, Result};
