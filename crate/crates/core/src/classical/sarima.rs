//! Seasonal ARIMA fitted by conditional sum of squares.
//!
//! The model is `φ(B) Φ(B^m) ∇^d ∇_m^D x_t = c + θ(B) Θ(B^m) ε_t`. The
//! differenced series is mean-adjusted, the innovations are obtained by the
//! multiplicative ARMA recursion with pre-sample values set to zero, and the
//! coefficients (each mapped into (-1, 1) through `tanh`) minimise Σε².

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::stats;

/// Differencing must leave at least this many observations.
pub const MIN_EFFECTIVE_OBS: usize = 20;
const MAX_ORDER: usize = 2;
const MIN_SIGMA2: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SarimaOrders {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub period: usize,
}

impl SarimaOrders {
    pub fn new(
        (p, d, q): (usize, usize, usize),
        (seasonal_p, seasonal_d, seasonal_q): (usize, usize, usize),
        period: usize,
    ) -> Result<Self> {
        if [p, q, seasonal_p, seasonal_q].iter().any(|&o| o > MAX_ORDER) || d > 1 || seasonal_d > 1 {
            return Err(Error::invalid("orders", "p, q, P, Q must be in 0..=2 and d, D in 0..=1"));
        }
        if p + d + q + seasonal_p + seasonal_d + seasonal_q == 0 {
            return Err(Error::invalid("orders", "at least one order must be positive"));
        }
        if period < 1 || (period < 2 && seasonal_p + seasonal_d + seasonal_q > 0) {
            return Err(Error::invalid("period", format!("seasonal terms need period >= 2, got {period}")));
        }
        Ok(SarimaOrders { p, d, q, seasonal_p, seasonal_d, seasonal_q, period })
    }

    /// Number of estimated parameters counted by AIC (intercept included).
    pub fn parameter_count(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q + 1
    }

    fn coefficient_count(&self) -> usize {
        self.parameter_count() - 1
    }

    pub fn differencing_lag(&self) -> usize {
        self.d + self.seasonal_d * self.period
    }

    fn sort_key(&self) -> (usize, usize, usize, usize, usize, usize) {
        (self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q)
    }
}

impl std::fmt::Display for SarimaOrders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})[{}]",
            self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q, self.period
        )
    }
}

/// Multiplies two lag polynomials given as coefficient vectors (index =
/// lag, index 0 = 1).
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `1 + sign * Σ c_i B^(i*stride)`.
fn lag_poly(coefs: &[f64], stride: usize, sign: f64) -> Vec<f64> {
    let mut out = vec![0.0; coefs.len() * stride + 1];
    out[0] = 1.0;
    for (i, c) in coefs.iter().enumerate() {
        out[(i + 1) * stride] = sign * c;
    }
    out
}

/// Non-zero terms of a polynomial beyond lag 0, as (lag, coefficient).
fn sparse_tail(poly: &[f64]) -> Vec<(usize, f64)> {
    poly.iter().enumerate().skip(1).filter(|(_, c)| **c != 0.0).map(|(k, c)| (k, *c)).collect()
}

fn difference_poly(orders: &SarimaOrders) -> Vec<f64> {
    let mut poly = vec![1.0];
    for _ in 0..orders.d {
        poly = poly_mul(&poly, &[1.0, -1.0]);
    }
    for _ in 0..orders.seasonal_d {
        poly = poly_mul(&poly, &lag_poly(&[1.0], orders.period, -1.0));
    }
    poly
}

fn difference(values: &[f64], poly: &[f64]) -> Vec<f64> {
    let lag = poly.len() - 1;
    (lag..values.len())
        .map(|t| poly.iter().enumerate().map(|(k, c)| c * values[t - k]).sum())
        .collect()
}

#[derive(Debug, Clone)]
struct ArmaPolys {
    /// Terms of φ(B)Φ(B^m) beyond lag 0.
    ar: Vec<(usize, f64)>,
    /// Terms of θ(B)Θ(B^m) beyond lag 0.
    ma: Vec<(usize, f64)>,
}

impl ArmaPolys {
    fn new(orders: &SarimaOrders, ar: &[f64], ma: &[f64], sar: &[f64], sma: &[f64]) -> Self {
        let m = orders.period;
        let ar_poly = poly_mul(&lag_poly(ar, 1, -1.0), &lag_poly(sar, m.max(1), -1.0));
        let ma_poly = poly_mul(&lag_poly(ma, 1, 1.0), &lag_poly(sma, m.max(1), 1.0));
        ArmaPolys { ar: sparse_tail(&ar_poly), ma: sparse_tail(&ma_poly) }
    }

    fn max_ar_lag(&self) -> usize {
        self.ar.last().map_or(0, |t| t.0)
    }

    fn max_ma_lag(&self) -> usize {
        self.ma.last().map_or(0, |t| t.0)
    }

    /// Innovations of the centred series with zero pre-sample values.
    fn innovations(&self, z: &[f64]) -> Vec<f64> {
        let mut eps = vec![0.0; z.len()];
        for t in 0..z.len() {
            let mut e = z[t];
            for &(k, c) in &self.ar {
                if k <= t {
                    e += c * z[t - k];
                }
            }
            for &(k, c) in &self.ma {
                if k <= t {
                    e -= c * eps[t - k];
                }
            }
            eps[t] = e;
        }
        eps
    }

    fn sse(&self, z: &[f64]) -> f64 {
        self.innovations(z).iter().map(|e| e * e).sum()
    }
}

fn unpack(orders: &SarimaOrders, raw: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut it = raw.iter().map(|u| u.tanh());
    let ar = it.by_ref().take(orders.p).collect();
    let ma = it.by_ref().take(orders.q).collect();
    let sar = it.by_ref().take(orders.seasonal_p).collect();
    let sma = it.by_ref().take(orders.seasonal_q).collect();
    (ar, ma, sar, sma)
}

/// Recent history needed for walk-forward prediction. Each buffer holds the
/// most recent values last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaState {
    pub raw_tail: Vec<f64>,
    pub centred_tail: Vec<f64>,
    pub innovation_tail: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaModel {
    pub orders: SarimaOrders,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sar: Vec<f64>,
    pub sma: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub aic: f64,
    pub css: f64,
    pub n_eff: usize,
    pub state: SarimaState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarimaFit {
    pub model: SarimaModel,
    /// One-step forecasts for `train[orders.differencing_lag()..]`.
    pub in_sample: Vec<f64>,
    pub iterations: usize,
}

fn tail(values: &[f64], len: usize) -> Vec<f64> {
    values[values.len().saturating_sub(len)..].to_vec()
}

pub fn sarima_fit(train: &[f64], orders: SarimaOrders) -> Result<SarimaFit> {
    let lag = orders.differencing_lag();
    if train.len() < lag + MIN_EFFECTIVE_OBS {
        return Err(Error::InsufficientData { required: lag + MIN_EFFECTIVE_OBS, actual: train.len() });
    }
    let diff_poly = difference_poly(&orders);
    let w = difference(train, &diff_poly);
    let intercept = stats::mean(&w);
    let z: Vec<f64> = w.iter().map(|v| v - intercept).collect();

    let objective = |raw: &[f64]| {
        let (ar, ma, sar, sma) = unpack(&orders, raw);
        ArmaPolys::new(&orders, &ar, &ma, &sar, &sma).sse(&z)
    };
    let x0 = vec![0.0; orders.coefficient_count()];
    let result = nelder_mead(objective, &x0, &SimplexOptions::default())?;
    if !result.value.is_finite() {
        return Err(Error::Numerical(format!("CSS objective not finite for {orders}")));
    }

    let (ar, ma, sar, sma) = unpack(&orders, &result.x);
    let polys = ArmaPolys::new(&orders, &ar, &ma, &sar, &sma);
    let eps = polys.innovations(&z);
    let css: f64 = eps.iter().map(|e| e * e).sum();
    let n_eff = z.len();
    let sigma2 = (css / n_eff as f64).max(MIN_SIGMA2);
    let aic = n_eff as f64 * sigma2.ln() + 2.0 * orders.parameter_count() as f64;

    let in_sample = train[lag..].iter().zip(&eps).map(|(x, e)| x - e).collect();
    let state = SarimaState {
        raw_tail: tail(train, lag),
        centred_tail: tail(&z, polys.max_ar_lag()),
        innovation_tail: tail(&eps, polys.max_ma_lag()),
    };
    let model = SarimaModel { orders, ar, ma, sar, sma, intercept, sigma2, aic, css, n_eff, state };
    Ok(SarimaFit { model, in_sample, iterations: result.iterations })
}

/// Candidate orders in lexicographic (p, d, q, P, D, Q) order. Without a
/// usable period only non-seasonal candidates are produced.
fn candidate_grid(period: usize) -> Vec<SarimaOrders> {
    let seasonal = if period >= 2 { MAX_ORDER } else { 0 };
    let seasonal_d = if period >= 2 { 1 } else { 0 };
    let mut out = Vec::new();
    for p in 0..=MAX_ORDER {
        for d in 0..=1 {
            for q in 0..=MAX_ORDER {
                for sp in 0..=seasonal {
                    for sd in 0..=seasonal_d {
                        for sq in 0..=seasonal {
                            if let Ok(o) = SarimaOrders::new((p, d, q), (sp, sd, sq), period.max(1)) {
                                out.push(o);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Fits every candidate (in parallel) and keeps the lowest AIC. Ties go to
/// fewer parameters, then to the lexicographically first orders.
pub fn sarima_select_fit(train: &[f64], period: usize) -> Result<SarimaFit> {
    let candidates: Vec<SarimaOrders> = candidate_grid(period)
        .into_iter()
        .filter(|o| train.len() >= o.differencing_lag() + MIN_EFFECTIVE_OBS)
        .collect();
    let fits: Vec<Option<SarimaFit>> =
        candidates.par_iter().map(|o| sarima_fit(train, *o).ok()).collect();
    fits.into_iter()
        .flatten()
        .min_by(|a, b| {
            let (ma, mb) = (&a.model, &b.model);
            ma.aic
                .total_cmp(&mb.aic)
                .then(ma.orders.parameter_count().cmp(&mb.orders.parameter_count()))
                .then(ma.orders.sort_key().cmp(&mb.orders.sort_key()))
        })
        .ok_or_else(|| Error::Numerical("no SARIMA candidate could be fitted".into()))
}

pub fn sarima_select(train: &[f64], period: usize) -> Result<SarimaOrders> {
    sarima_select_fit(train, period).map(|f| f.model.orders)
}

impl SarimaModel {
    fn polys(&self) -> ArmaPolys {
        ArmaPolys::new(&self.orders, &self.ar, &self.ma, &self.sar, &self.sma)
    }

    /// Walk-forward forecasts over `observed`, updating the stored state.
    pub fn advance(&mut self, observed: &[f64]) -> Vec<f64> {
        let polys = self.polys();
        let diff_tail = sparse_tail(&difference_poly(&self.orders));
        let (ar_len, ma_len) = (polys.max_ar_lag(), polys.max_ma_lag());
        let raw_len = self.orders.differencing_lag();

        let mut raw: VecDeque<f64> = self.state.raw_tail.iter().copied().collect();
        let mut centred: VecDeque<f64> = self.state.centred_tail.iter().copied().collect();
        let mut eps: VecDeque<f64> = self.state.innovation_tail.iter().copied().collect();
        // Lag k reads the k-th most recent value; anything older is zero.
        let back = |buf: &VecDeque<f64>, k: usize| if k <= buf.len() { buf[buf.len() - k] } else { 0.0 };

        let mut out = Vec::with_capacity(observed.len());
        for &x in observed {
            let mut z_hat = 0.0;
            for &(k, c) in &polys.ar {
                z_hat -= c * back(&centred, k);
            }
            for &(k, c) in &polys.ma {
                z_hat += c * back(&eps, k);
            }
            // x_t = w_t - Σ_{k>=1} g_k x_{t-k} for the differencing polynomial g.
            let undiff: f64 = diff_tail.iter().map(|&(k, c)| c * back(&raw, k)).sum();
            let forecast = z_hat + self.intercept - undiff;
            out.push(forecast);

            let z = x + undiff - self.intercept;
            push_bounded(&mut raw, x, raw_len);
            push_bounded(&mut centred, z, ar_len);
            push_bounded(&mut eps, z - z_hat, ma_len);
        }
        self.state = SarimaState {
            raw_tail: raw.into(),
            centred_tail: centred.into(),
            innovation_tail: eps.into(),
        };
        out
    }

    pub fn predict_one_step(&self, observed: &[f64]) -> Vec<f64> {
        self.clone().advance(observed)
    }
}

fn push_bounded(buf: &mut VecDeque<f64>, value: f64, cap: usize) {
    if cap == 0 {
        return;
    }
    if buf.len() == cap {
        buf.pop_front();
    }
    buf.push_back(value);
}
