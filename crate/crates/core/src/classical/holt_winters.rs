//! Additive Holt-Winters exponential smoothing.
//!
//! ```text
//! forecast: x̂_t = ℓ + b + s_{t-m}
//! level:    ℓ' = α (x_t - s_{t-m}) + (1 - α)(ℓ + b)
//! trend:    b' = β (ℓ' - ℓ) + (1 - β) b
//! season:   s_t = γ (x_t - ℓ - b) + (1 - γ) s_{t-m}
//! ```
//!
//! The smoothing coefficients are fitted by Nelder-Mead on the in-sample
//! one-step MSE through a logistic reparameterisation, which keeps them in
//! [0, 1]. With `period == 1` the model degenerates to Holt's linear trend
//! method and γ is frozen at 0.

use serde::{Deserialize, Serialize};

use super::{logistic, logit};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoltWintersModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub period: usize,
    pub level: f64,
    pub trend: f64,
    /// Ring buffer of seasonal indices; `phase` marks the one used by the
    /// next forecast.
    pub seasonals: Vec<f64>,
    pub phase: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoltWintersFit {
    pub model: HoltWintersModel,
    /// One-step forecasts for `train[period..]`.
    pub in_sample: Vec<f64>,
    pub train_mse: f64,
    pub iterations: usize,
}

impl HoltWintersModel {
    /// Initial state from the first two cycles of `train`, positioned to
    /// forecast `train[period]`.
    pub fn initialize(train: &[f64], period: usize, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if period < 1 {
            return Err(Error::invalid("period", "must be >= 1"));
        }
        if train.len() < 2 * period {
            return Err(Error::InsufficientData { required: 2 * period, actual: train.len() });
        }
        let first = stats::mean(&train[..period]);
        let second = stats::mean(&train[period..2 * period]);
        Ok(HoltWintersModel {
            alpha,
            beta,
            gamma,
            period,
            level: first,
            trend: (second - first) / period as f64,
            seasonals: train[..period].iter().map(|v| v - first).collect(),
            phase: 0,
        })
    }

    pub fn forecast(&self) -> f64 {
        self.level + self.trend + self.seasonals[self.phase]
    }

    /// Absorbs one observation.
    pub fn update(&mut self, observed: f64) {
        let season = self.seasonals[self.phase];
        let base = self.level + self.trend;
        let level = self.alpha * (observed - season) + (1.0 - self.alpha) * base;
        self.trend = self.beta * (level - self.level) + (1.0 - self.beta) * self.trend;
        self.seasonals[self.phase] = self.gamma * (observed - base) + (1.0 - self.gamma) * season;
        self.level = level;
        self.phase = (self.phase + 1) % self.period;
    }

    /// Walk-forward forecasts over `observed`, updating this state.
    pub fn advance(&mut self, observed: &[f64]) -> Vec<f64> {
        observed
            .iter()
            .map(|&x| {
                let f = self.forecast();
                self.update(x);
                f
            })
            .collect()
    }

    /// Walk-forward forecasts from a copy of the fitted state.
    pub fn predict_one_step(&self, observed: &[f64]) -> Vec<f64> {
        self.clone().advance(observed)
    }

    /// Moves the seasonal mean into the level; forecasts are unchanged.
    fn recenter(&mut self) {
        let c = stats::mean(&self.seasonals);
        self.seasonals.iter_mut().for_each(|s| *s -= c);
        self.level += c;
    }
}

fn in_sample_mse(train: &[f64], period: usize, alpha: f64, beta: f64, gamma: f64) -> f64 {
    let Ok(mut model) = HoltWintersModel::initialize(train, period, alpha, beta, gamma) else {
        return f64::INFINITY;
    };
    let mut sse = 0.0;
    for &x in &train[period..] {
        let e = x - model.forecast();
        sse += e * e;
        model.update(x);
    }
    sse / (train.len() - period) as f64
}

/// Fits α, β, γ on the training segment. `period == 1` fits a
/// non-seasonal model with γ = 0.
pub fn hw_fit(train: &[f64], period: usize) -> Result<HoltWintersFit> {
    if period < 1 {
        return Err(Error::invalid("period", "must be >= 1"));
    }
    if train.len() < 2 * period || train.len() < 2 {
        return Err(Error::InsufficientData { required: (2 * period).max(2), actual: train.len() });
    }
    let seasonal = period > 1;
    let unpack = |u: &[f64]| {
        let gamma = if seasonal { logistic(u[2]) } else { 0.0 };
        (logistic(u[0]), logistic(u[1]), gamma)
    };
    let mut x0 = vec![logit(0.5), logit(0.1)];
    if seasonal {
        x0.push(logit(0.1));
    }
    let result = nelder_mead(
        |u| {
            let (a, b, g) = unpack(u);
            in_sample_mse(train, period, a, b, g)
        },
        &x0,
        &SimplexOptions::default(),
    )?;
    let (alpha, beta, gamma) = unpack(&result.x);

    let mut model = HoltWintersModel::initialize(train, period, alpha, beta, gamma)?;
    let in_sample = model.advance(&train[period..]);
    let train_mse = in_sample
        .iter()
        .zip(&train[period..])
        .map(|(f, x)| (x - f) * (x - f))
        .sum::<f64>()
        / in_sample.len() as f64;
    model.recenter();
    Ok(HoltWintersFit { model, in_sample, train_mse, iterations: result.iterations })
}
