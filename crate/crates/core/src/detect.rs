//! Residual thresholding detectors.
//!
//! Every detector is fitted on reference (training) residuals and applied
//! pointwise to test residuals:
//!
//! | method       | flags `r` when                                  |
//! |--------------|-------------------------------------------------|
//! | `ztest`      | `|r - μ| / σ > k`, `k = 3`                      |
//! | `gaussian`   | `N(r; μ, σ²) < τ`, τ = 1st percentile of the reference densities |
//! | `percentile` | `|r| > q95` of the absolute reference residuals |
//! | `iqr`        | `r` outside `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`      |
//!
//! All methods share the continuous score `|r - μ| / σ`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_len, Error, Result};
use crate::stats;

pub const MIN_REFERENCE_LEN: usize = 20;
pub const ZTEST_K: f64 = 3.0;
pub const IQR_FENCE: f64 = 1.5;
pub const SIGMA_FLOOR: f64 = 1e-12;
const GAUSSIAN_PERCENTILE: f64 = 1.0;
const ABS_PERCENTILE: f64 = 95.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorMethod {
    ZTest,
    Gaussian,
    Percentile,
    Iqr,
}

impl DetectorMethod {
    pub const ALL: [DetectorMethod; 4] =
        [DetectorMethod::ZTest, DetectorMethod::Gaussian, DetectorMethod::Percentile, DetectorMethod::Iqr];

    pub fn name(self) -> &'static str {
        match self {
            DetectorMethod::ZTest => "ztest",
            DetectorMethod::Gaussian => "gaussian",
            DetectorMethod::Percentile => "percentile",
            DetectorMethod::Iqr => "iqr",
        }
    }
}

impl fmt::Display for DetectorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid("detector", format!("unknown detector '{s}'")))
    }
}

/// Signed residuals `actual - predicted` with their positions in the
/// source series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub signed: Vec<f64>,
    pub positions: Vec<usize>,
}

impl ResidualSeries {
    pub fn new(signed: Vec<f64>, positions: Vec<usize>) -> Result<Self> {
        ensure_same_len(signed.len(), positions.len())?;
        Ok(ResidualSeries { signed, positions })
    }

    pub fn len(&self) -> usize {
        self.signed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signed.is_empty()
    }
}

/// Residuals for `actual[i] - predicted[i]`, positioned from `offset`.
pub fn compute_residuals(actual: &[f64], predicted: &[f64], offset: usize) -> Result<ResidualSeries> {
    ensure_same_len(actual.len(), predicted.len())?;
    let signed = actual.iter().zip(predicted).map(|(a, p)| a - p).collect();
    Ok(ResidualSeries { signed, positions: (offset..offset + actual.len()).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub method: DetectorMethod,
    pub mu: f64,
    pub sigma: f64,
    pub k: f64,
    /// Natural log of the Gaussian density cutoff τ.
    pub log_tau: f64,
    pub q95: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// σ was below [`SIGMA_FLOOR`] and has been floored.
    pub sigma_floored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

pub fn gaussian_log_density(r: f64, mu: f64, sigma: f64) -> f64 {
    let z = (r - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Percentile of the densities `exp(log_values)` by linear interpolation,
/// returned as a log so tiny densities do not underflow.
fn log_percentile(log_values: &[f64], p: f64) -> f64 {
    let sorted = stats::sorted(log_values);
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    log_add_exp(sorted[lo] + (1.0 - frac).ln(), sorted[lo + 1] + frac.ln())
}

pub fn fit_detector(method: DetectorMethod, reference: &[f64]) -> Result<DetectorParams> {
    if reference.len() < MIN_REFERENCE_LEN {
        return Err(Error::InsufficientData { required: MIN_REFERENCE_LEN, actual: reference.len() });
    }
    if reference.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numerical("non-finite reference residual".into()));
    }
    let mu = stats::mean(reference);
    let raw_sigma = stats::population_std(reference, mu);
    let sigma_floored = !(raw_sigma >= SIGMA_FLOOR);
    let sigma = if sigma_floored { SIGMA_FLOOR } else { raw_sigma };

    let log_densities: Vec<f64> = reference.iter().map(|&r| gaussian_log_density(r, mu, sigma)).collect();
    let log_tau = log_percentile(&log_densities, GAUSSIAN_PERCENTILE);
    let abs_sorted = stats::sorted(&reference.iter().map(|r| r.abs()).collect::<Vec<_>>());
    let signed_sorted = stats::sorted(reference);
    let q1 = stats::percentile_sorted(&signed_sorted, 25.0);
    let q3 = stats::percentile_sorted(&signed_sorted, 75.0);
    Ok(DetectorParams {
        method,
        mu,
        sigma,
        k: ZTEST_K,
        log_tau,
        q95: stats::percentile_sorted(&abs_sorted, ABS_PERCENTILE),
        q1,
        q3,
        iqr: q3 - q1,
        sigma_floored,
    })
}

impl DetectorParams {
    pub fn score(&self, r: f64) -> f64 {
        ((r - self.mu) / self.sigma).abs()
    }

    pub fn flags(&self, r: f64) -> bool {
        match self.method {
            DetectorMethod::ZTest => self.score(r) > self.k,
            DetectorMethod::Gaussian => gaussian_log_density(r, self.mu, self.sigma) < self.log_tau,
            DetectorMethod::Percentile => r.abs() > self.q95,
            DetectorMethod::Iqr => r < self.q1 - IQR_FENCE * self.iqr || r > self.q3 + IQR_FENCE * self.iqr,
        }
    }

    /// The z-test threshold `k'` whose labels coincide with the Gaussian
    /// likelihood rule: `N(r) < τ ⇔ |r - μ|/σ > k'`.
    pub fn implied_gaussian_k(&self) -> f64 {
        let log_peak = gaussian_log_density(self.mu, self.mu, self.sigma);
        (2.0 * (log_peak - self.log_tau)).max(0.0).sqrt()
    }

    /// The Gaussian cutoff τ itself (may underflow to 0).
    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn with_method(&self, method: DetectorMethod) -> Self {
        DetectorParams { method, ..self.clone() }
    }
}

pub fn apply_detector(params: &DetectorParams, test: &[f64]) -> DetectionOutput {
    DetectionOutput {
        labels: test.iter().map(|&r| params.flags(r)).collect(),
        scores: test.iter().map(|&r| params.score(r)).collect(),
    }
}
