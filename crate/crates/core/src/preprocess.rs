//! Missing-value repair, train-only z-score normalisation, seasonal period
//! detection and additive STL decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Consecutive-missing runs shorter than this are forward-filled; longer
/// runs are linearly interpolated.
pub const SMALL_GAP: usize = 5;
/// Series with a larger missing fraction are flagged for inspection.
pub const MISSING_FLAG_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RepairReport {
    pub filled_forward: usize,
    pub interpolated: usize,
    pub missing_fraction: f64,
    pub flagged: bool,
}

/// Fills non-finite entries. Interior runs of fewer than [`SMALL_GAP`]
/// values repeat the last observation, longer runs are interpolated between
/// their bounding observations. A leading run is back-filled from the first
/// observation (counted as interpolated) and a trailing run is forward-filled.
pub fn repair_missing(values: &[f64]) -> Result<(Vec<f64>, RepairReport)> {
    let first = values
        .iter()
        .position(|v| v.is_finite())
        .ok_or_else(|| Error::Format("series has no observed values".into()))?;
    let mut out = values.to_vec();
    let mut report = RepairReport::default();

    for v in out.iter_mut().take(first) {
        *v = values[first];
    }
    report.interpolated += first;

    let mut j = first + 1;
    while j < out.len() {
        if out[j].is_finite() {
            j += 1;
            continue;
        }
        let start = j;
        while j < out.len() && !out[j].is_finite() {
            j += 1;
        }
        let gap = j - start;
        let left = out[start - 1];
        if j == out.len() || gap < SMALL_GAP {
            for v in &mut out[start..j] {
                *v = left;
            }
            report.filled_forward += gap;
        } else {
            let right = out[j];
            let span = (gap + 1) as f64;
            for (k, v) in out[start..j].iter_mut().enumerate() {
                let frac = (k + 1) as f64 / span;
                *v = left + frac * (right - left);
            }
            report.interpolated += gap;
        }
    }

    let missing = values.iter().filter(|v| !v.is_finite()).count();
    report.missing_fraction = missing as f64 / values.len() as f64;
    report.flagged = report.missing_fraction > MISSING_FLAG_FRACTION;
    Ok((out, report))
}

/// Normalisation statistics fitted on the training segment only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mean: f64,
    pub std: f64,
    /// Set when the training data was (numerically) constant and `std` was
    /// replaced by 1.
    pub degenerate: bool,
}

impl NormParams {
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn invert(&self, normalized: &[f64]) -> Vec<f64> {
        normalized.iter().map(|z| z * self.std + self.mean).collect()
    }
}

pub fn zscore_fit(train: &[f64]) -> Result<NormParams> {
    if train.len() < 2 {
        return Err(Error::InsufficientData { required: 2, actual: train.len() });
    }
    let mean = stats::mean(train);
    let std = stats::population_std(train, mean);
    if std < 1e-12 {
        Ok(NormParams { mean, std: 1.0, degenerate: true })
    } else {
        Ok(NormParams { mean, std, degenerate: false })
    }
}

pub fn zscore_apply(params: &NormParams, values: &[f64]) -> Vec<f64> {
    params.apply(values)
}

/// ACF values above this count as seasonal evidence.
pub const ACF_THRESHOLD: f64 = 0.3;
pub const MAX_PERIOD_LAG: usize = 400;

pub fn default_max_lag(n: usize) -> usize {
    (n / 2).min(MAX_PERIOD_LAG)
}

/// Biased sample autocorrelation for lags `0..=max_lag` (clamped to n-1).
/// `None` when the series has no variance.
pub fn autocorrelation(values: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = stats::mean(values);
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|c| c * c).sum();
    let scale = centered.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || denom <= 1e-24 * scale * scale * n as f64 {
        return None;
    }
    let max_lag = max_lag.min(n - 1);
    Some(
        (0..=max_lag)
            .map(|lag| {
                let num: f64 = centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum();
                num / denom
            })
            .collect(),
    )
}

/// Lag of the first local ACF maximum in `2..=max_lag` exceeding
/// [`ACF_THRESHOLD`], if any.
pub fn detect_period(values: &[f64], max_lag: usize) -> Option<usize> {
    if max_lag < 2 {
        return None;
    }
    let acf = autocorrelation(values, max_lag + 1)?;
    let last = max_lag.min(acf.len().saturating_sub(2));
    (2..=last).find(|&k| acf[k] > ACF_THRESHOLD && acf[k] > acf[k - 1] && acf[k] >= acf[k + 1])
}

fn tricube(u: f64) -> f64 {
    let t = 1.0 - u.abs().powi(3);
    if t <= 0.0 {
        0.0
    } else {
        t * t * t
    }
}

/// Local polynomial fit of `ys` (observed at positions 0..n) evaluated at
/// position `x`, using the `span` positions nearest to `x`. Distances are
/// scaled by one more than the farthest in-window distance so every
/// in-window point keeps a positive weight.
fn loess_at(ys: &[f64], x: f64, span: usize, degree: u8) -> f64 {
    let n = ys.len();
    let span = span.clamp(1, n);
    let centre = x.round() as isize - (span as isize - 1) / 2;
    let left = centre.clamp(0, (n - span) as isize) as usize;
    let window = left..left + span;

    let max_dist = window.clone().map(|j| (j as f64 - x).abs()).fold(0.0f64, f64::max);
    let h = max_dist + 1.0;

    // Offsets from the first in-window value keep constant input exact.
    let anchor = ys[left];
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let weights: Vec<f64> = window.clone().map(|j| tricube((j as f64 - x) / h)).collect();
    for (w, j) in weights.iter().zip(window.clone()) {
        sw += w;
        swx += w * j as f64;
        swy += w * (ys[j] - anchor);
    }
    let y_bar = anchor + swy / sw;
    if degree == 0 || span < 2 {
        return y_bar;
    }
    let x_bar = swx / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (w, j) in weights.iter().zip(window) {
        let dx = j as f64 - x_bar;
        sxx += w * dx * dx;
        sxy += w * dx * (ys[j] - anchor);
    }
    if sxx <= 1e-12 * sw {
        return y_bar;
    }
    y_bar + sxy / sxx * (x - x_bar)
}

fn loess_all(ys: &[f64], span: usize, degree: u8) -> Vec<f64> {
    (0..ys.len()).map(|i| loess_at(ys, i as f64, span, degree)).collect()
}

/// Loess smoother evaluated at every position. `span` must be odd and at
/// least 3; spans longer than the series are clamped to the largest odd
/// value that fits.
pub fn loess_smooth(values: &[f64], span: usize, degree: u8) -> Result<Vec<f64>> {
    if values.len() < 3 {
        return Err(Error::InsufficientData { required: 3, actual: values.len() });
    }
    if span < 3 || span.is_multiple_of(2) {
        return Err(Error::invalid("span", format!("must be odd and >= 3, got {span}")));
    }
    if degree > 1 {
        return Err(Error::invalid("degree", format!("must be 0 or 1, got {degree}")));
    }
    let max_odd = if values.len() % 2 == 1 { values.len() } else { values.len() - 1 };
    Ok(loess_all(values, span.min(max_odd), degree))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlComponents {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub period: usize,
}

pub const STL_INNER_ITERATIONS: usize = 2;
pub const STL_SEASONAL_SPAN: usize = 7;

fn next_odd(x: f64) -> usize {
    let v = x.ceil().max(1.0) as usize;
    if v.is_multiple_of(2) {
        v + 1
    } else {
        v
    }
}

pub fn stl_trend_span(period: usize) -> usize {
    next_odd(1.5 * period as f64 / (1.0 - 1.5 / STL_SEASONAL_SPAN as f64))
}

fn moving_average(values: &[f64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1 - len);
    let mut sum: f64 = values[..len].iter().sum();
    out.push(sum / len as f64);
    for i in len..values.len() {
        sum += values[i] - values[i - len];
        out.push(sum / len as f64);
    }
    out
}

/// Non-robust STL with two inner passes.
pub fn stl_decompose(values: &[f64], period: usize) -> Result<StlComponents> {
    let n = values.len();
    if period < 2 {
        return Err(Error::invalid("period", format!("must be >= 2, got {period}")));
    }
    if n < 2 * period {
        return Err(Error::InsufficientData { required: 2 * period, actual: n });
    }
    let low_pass_span = next_odd(period as f64);
    let trend_span = stl_trend_span(period);

    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut cycle = vec![0.0; n + 2 * period];
    let mut sub = Vec::with_capacity(n / period + 1);

    for _ in 0..STL_INNER_ITERATIONS {
        // Cycle-subseries smoothing, extended one period past each end.
        for phase in 0..period {
            sub.clear();
            sub.extend((phase..n).step_by(period).map(|j| values[j] - trend[j]));
            let k = sub.len() as isize;
            for s in -1..=k {
                let smoothed = loess_at(&sub, s as f64, STL_SEASONAL_SPAN, 0);
                cycle[((s + 1) as usize) * period + phase] = smoothed;
            }
        }

        let low = moving_average(&moving_average(&moving_average(&cycle, period), period), 3);
        let low = loess_all(&low, low_pass_span, 1);
        for i in 0..n {
            seasonal[i] = cycle[i + period] - low[i];
        }
        recenter_cycles(&mut seasonal, period);

        let deseasonalized: Vec<f64> = values.iter().zip(&seasonal).map(|(v, s)| v - s).collect();
        trend = loess_all(&deseasonalized, trend_span, 1);
    }

    let residual = (0..n).map(|i| values[i] - trend[i] - seasonal[i]).collect();
    Ok(StlComponents { trend, seasonal, residual, period })
}

/// Removes the mean of every full cycle; a trailing partial cycle is
/// shifted by the mean of the last `period` values.
fn recenter_cycles(seasonal: &mut [f64], period: usize) {
    let n = seasonal.len();
    let full = n / period * period;
    for block in seasonal[..full].chunks_mut(period) {
        let m = stats::mean(block);
        block.iter_mut().for_each(|v| *v -= m);
    }
    if full < n {
        let m = stats::mean(&seasonal[n - period..]);
        seasonal[full..].iter_mut().for_each(|v| *v -= m);
    }
}
