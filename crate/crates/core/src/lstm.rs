//! Stacked LSTM forecaster with hand-written backpropagation through time.
//!
//! Each layer runs
//!
//! ```text
//! f = σ(W_f h + U_f x + b_f)      i = σ(W_i h + U_i x + b_i)
//! o = σ(W_o h + U_o x + b_o)      g = tanh(W_c h + U_c x + b_c)
//! c' = f ⊙ c + i ⊙ g              h' = o ⊙ tanh(c')
//! ```
//!
//! over a window of past values; the prediction is a linear head on the
//! final hidden state of the top layer (many-to-one). Parameters live in one
//! flat vector so the optimiser, clipping and snapshots treat them
//! uniformly. Per layer the layout is `W` (4h × h, row-major), `U` (4h × in),
//! `b` (4h), with gate blocks stacked in the order f, i, o, c; the head
//! follows as `v` (h) and a scalar bias.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{clip_gradients, AdamState, EarlyStopper, StopDecision};

pub const SNAPSHOT_VERSION: u32 = 1;
const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmHyperparams {
    pub window: usize,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for LstmHyperparams {
    fn default() -> Self {
        LstmHyperparams {
            window: 50,
            layers: 2,
            hidden: 64,
            dropout: 0.2,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            max_epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

impl LstmHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", format!("must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm", "must be positive"));
        }
        Ok(())
    }
}

/// Offsets of one layer's blocks inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    input_dim: usize,
    w: usize,
    u: usize,
    b: usize,
    end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: usize,
    pub hidden: usize,
    pub values: Vec<f64>,
}

impl LstmParams {
    pub fn parameter_count(layers: usize, hidden: usize) -> usize {
        let h = hidden;
        let first = 4 * h * h + 4 * h + 4 * h;
        let rest = 4 * h * h + 4 * h * h + 4 * h;
        first + (layers - 1) * rest + h + 1
    }

    pub fn zeros(layers: usize, hidden: usize) -> Self {
        LstmParams { layers, hidden, values: vec![0.0; Self::parameter_count(layers, hidden)] }
    }

    /// Weights uniform in ±1/√hidden, zero biases except the forget gate.
    pub fn init(layers: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(layers, hidden);
        let k = 1.0 / (hidden as f64).sqrt();
        for l in 0..layers {
            let lay = p.layout(l);
            for v in &mut p.values[lay.w..lay.b] {
                *v = rng.random_range(-k..k);
            }
            for v in &mut p.values[lay.b..lay.b + hidden] {
                *v = FORGET_BIAS;
            }
        }
        let head = p.head_offset();
        for v in &mut p.values[head..head + hidden] {
            *v = rng.random_range(-k..k);
        }
        p
    }

    fn layout(&self, layer: usize) -> LayerLayout {
        let h = self.hidden;
        let mut start = 0;
        for l in 0..layer {
            start += layer_size(l, h);
        }
        let input_dim = if layer == 0 { 1 } else { h };
        let w = start;
        let u = w + 4 * h * h;
        let b = u + 4 * h * input_dim;
        LayerLayout { input_dim, w, u, b, end: b + 4 * h }
    }

    fn head_offset(&self) -> usize {
        self.layout(self.layers - 1).end
    }

    pub fn output_bias(&self) -> f64 {
        *self.values.last().expect("parameters are never empty")
    }

    fn check(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("params", "layers and hidden must be >= 1"));
        }
        if self.values.len() != Self::parameter_count(self.layers, self.hidden) {
            return Err(Error::LengthMismatch {
                left: self.values.len(),
                right: Self::parameter_count(self.layers, self.hidden),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite LSTM parameter".into()));
        }
        Ok(())
    }
}

fn layer_size(layer: usize, h: usize) -> usize {
    let input_dim = if layer == 0 { 1 } else { h };
    4 * h * h + 4 * h * input_dim + 4 * h
}

/// Inter-layer dropout masks: `masks[l]` scales layer `l`'s hidden outputs
/// (T × h, row per timestep) before they enter layer `l + 1`. Entries are 0
/// or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn sample(layers: usize, hidden: usize, steps: usize, rate: f64, rng: &mut ChaCha8Rng) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let masks = (0..layers.saturating_sub(1))
            .map(|_| (0..steps * hidden).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect())
            .collect();
        DropoutMasks { masks }
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Inputs as fed to the layer (T × input_dim).
    inputs: Vec<f64>,
    /// Gate activations (T × 4h), blocks f, i, o, g.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hiddens: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: usize,
    layers: Vec<LayerCache>,
    masks: Option<DropoutMasks>,
    pub prediction: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn lstm_forward(params: &LstmParams, window: &[f64], masks: Option<&DropoutMasks>) -> Result<(f64, ForwardCache)> {
    params.check()?;
    if window.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    if let Some(m) = masks {
        let expected = window.len() * params.hidden;
        if m.masks.len() != params.layers - 1 || m.masks.iter().any(|v| v.len() != expected) {
            return Err(Error::invalid("masks", "shape does not match layers × window × hidden"));
        }
    }
    Ok(forward_unchecked(params, window, masks))
}

fn forward_unchecked(params: &LstmParams, window: &[f64], masks: Option<&DropoutMasks>) -> (f64, ForwardCache) {
    let h = params.hidden;
    let steps = window.len();
    let v = &params.values;
    let mut layer_input: Vec<f64> = window.to_vec();
    let mut caches = Vec::with_capacity(params.layers);
    let mut pre = vec![0.0; 4 * h];
    for l in 0..params.layers {
        let lay = params.layout(l);
        let (w, u, b) = (&v[lay.w..lay.u], &v[lay.u..lay.b], &v[lay.b..lay.end]);
        let d = lay.input_dim;
        let mut cache = LayerCache {
            inputs: layer_input,
            gates: vec![0.0; steps * 4 * h],
            cells: vec![0.0; steps * h],
            tanh_cells: vec![0.0; steps * h],
            hiddens: vec![0.0; steps * h],
        };
        for t in 0..steps {
            let x = &cache.inputs[t * d..(t + 1) * d];
            pre.copy_from_slice(b);
            if t > 0 {
                let h_prev = &cache.hiddens[(t - 1) * h..t * h];
                for (r, p) in pre.iter_mut().enumerate() {
                    *p += dot(&w[r * h..(r + 1) * h], h_prev);
                }
            }
            for (r, p) in pre.iter_mut().enumerate() {
                *p += dot(&u[r * d..(r + 1) * d], x);
            }
            let gates = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..3 * h {
                gates[j] = sigmoid(pre[j]);
            }
            for j in 3 * h..4 * h {
                gates[j] = pre[j].tanh();
            }
            for j in 0..h {
                let c_prev = if t > 0 { cache.cells[(t - 1) * h + j] } else { 0.0 };
                let c = gates[j] * c_prev + gates[h + j] * gates[3 * h + j];
                let tc = c.tanh();
                cache.cells[t * h + j] = c;
                cache.tanh_cells[t * h + j] = tc;
                cache.hiddens[t * h + j] = gates[2 * h + j] * tc;
            }
        }
        layer_input = match masks {
            Some(m) if l + 1 < params.layers => {
                cache.hiddens.iter().zip(&m.masks[l]).map(|(a, b)| a * b).collect()
            }
            _ => cache.hiddens.clone(),
        };
        caches.push(cache);
    }
    let head = params.head_offset();
    let top = &caches[params.layers - 1].hiddens[(steps - 1) * h..steps * h];
    let prediction = dot(&v[head..head + h], top) + v[head + h];
    (prediction, ForwardCache { steps, layers: caches, masks: masks.cloned(), prediction })
}

/// Gradient of `(prediction - target)²` with respect to every parameter.
pub fn lstm_backward(params: &LstmParams, cache: &ForwardCache, target: f64) -> Result<Vec<f64>> {
    if cache.layers.len() != params.layers
        || cache.layers.first().is_some_and(|c| c.hiddens.len() != cache.steps * params.hidden)
    {
        return Err(Error::invalid("cache", "does not match the parameter shapes"));
    }
    let mut grad = vec![0.0; params.values.len()];
    backward_into(params, cache, 2.0 * (cache.prediction - target), &mut grad);
    Ok(grad)
}

/// Accumulates `d_pred · ∂prediction/∂θ` into `grad`.
fn backward_into(params: &LstmParams, cache: &ForwardCache, d_pred: f64, grad: &mut [f64]) {
    let h = params.hidden;
    let steps = cache.steps;
    let v = &params.values;
    let head = params.head_offset();
    let top = &cache.layers[params.layers - 1];
    axpy(d_pred, &top.hiddens[(steps - 1) * h..steps * h], &mut grad[head..head + h]);
    grad[head + h] += d_pred;

    // Gradient w.r.t. the current layer's hidden outputs coming from above.
    let mut dh_above = vec![0.0; steps * h];
    axpy(d_pred, &v[head..head + h], &mut dh_above[(steps - 1) * h..]);

    let mut dpre = vec![0.0; 4 * h];
    let mut dh_rec = vec![0.0; h];
    let mut dc_rec = vec![0.0; h];
    for l in (0..params.layers).rev() {
        let lay = params.layout(l);
        let d = lay.input_dim;
        let c = &cache.layers[l];
        let (w, u) = (&v[lay.w..lay.u], &v[lay.u..lay.b]);
        let mut dx = if l > 0 { vec![0.0; steps * d] } else { Vec::new() };
        dh_rec.iter_mut().for_each(|x| *x = 0.0);
        dc_rec.iter_mut().for_each(|x| *x = 0.0);
        for t in (0..steps).rev() {
            let gates = &c.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let (f, i, o, g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = c.tanh_cells[t * h + j];
                let c_prev = if t > 0 { c.cells[(t - 1) * h + j] } else { 0.0 };
                let dh = dh_above[t * h + j] + dh_rec[j];
                let d_o = dh * tc;
                let dc = dc_rec[j] + dh * o * (1.0 - tc * tc);
                dpre[j] = dc * c_prev * f * (1.0 - f);
                dpre[h + j] = dc * g * i * (1.0 - i);
                dpre[2 * h + j] = d_o * o * (1.0 - o);
                dpre[3 * h + j] = dc * i * (1.0 - g * g);
                dc_rec[j] = dc * f;
            }
            let x = &c.inputs[t * d..(t + 1) * d];
            {
                let (gw, rest) = grad[lay.w..lay.end].split_at_mut(4 * h * h);
                let (gu, gb) = rest.split_at_mut(4 * h * d);
                for (r, &dp) in dpre.iter().enumerate() {
                    if dp == 0.0 {
                        continue;
                    }
                    if t > 0 {
                        axpy(dp, &c.hiddens[(t - 1) * h..t * h], &mut gw[r * h..(r + 1) * h]);
                    }
                    axpy(dp, x, &mut gu[r * d..(r + 1) * d]);
                    gb[r] += dp;
                }
            }
            dh_rec.iter_mut().for_each(|x| *x = 0.0);
            for (r, &dp) in dpre.iter().enumerate() {
                if dp == 0.0 {
                    continue;
                }
                if t > 0 {
                    axpy(dp, &w[r * h..(r + 1) * h], &mut dh_rec);
                }
                if l > 0 {
                    axpy(dp, &u[r * d..(r + 1) * d], &mut dx[t * d..(t + 1) * d]);
                }
            }
        }
        if l > 0 {
            dh_above = match &cache.masks {
                Some(m) => dx.iter().zip(&m.masks[l - 1]).map(|(a, b)| a * b).collect(),
                None => dx,
            };
        }
    }
}

/// Sliding windows over a series: input `k` is `values[k..k+w]`, target `k`
/// is `values[k+w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    values: Vec<f64>,
    window: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.values.len() - self.window
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.values[k..k + self.window]
    }

    pub fn target(&self, k: usize) -> f64 {
        self.values[k + self.window]
    }
}

pub fn make_windows(values: &[f64], window: usize) -> Result<WindowedDataset> {
    if window == 0 {
        return Err(Error::invalid("window", "must be >= 1"));
    }
    if values.len() <= window {
        return Err(Error::InsufficientData { required: window + 1, actual: values.len() });
    }
    Ok(WindowedDataset { values: values.to_vec(), window })
}

/// One-step predictions for every position of `observed` past the first
/// `window` values, each from the `window` true values before it.
pub fn lstm_predict_one_step(params: &LstmParams, observed: &[f64], window: usize) -> Result<Vec<f64>> {
    params.check()?;
    let data = make_windows(observed, window)?;
    Ok((0..data.len())
        .into_par_iter()
        .map(|k| forward_unchecked(params, data.input(k), None).0)
        .collect())
}

fn mse_over(params: &LstmParams, data: &WindowedDataset) -> f64 {
    let sse: f64 = (0..data.len())
        .into_par_iter()
        .map(|k| {
            let e = forward_unchecked(params, data.input(k), None).0 - data.target(k);
            e * e
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    sse / data.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub early_stopped: bool,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv { path: path.to_path_buf(), source: e })?;
        let wrap = |e| Error::Csv { path: path.to_path_buf(), source: e };
        w.write_record(["epoch", "train_mse", "val_mse"]).map_err(wrap)?;
        for r in &self.epochs {
            w.write_record([r.epoch.to_string(), r.train_mse.to_string(), r.val_mse.to_string()]).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub hyperparams: LstmHyperparams,
    pub params: LstmParams,
}

impl LstmModel {
    /// See [`lstm_predict_one_step`]; `observed` must start with `window`
    /// values of history.
    pub fn predict_one_step(&self, observed: &[f64]) -> Result<Vec<f64>> {
        lstm_predict_one_step(&self.params, observed, self.hyperparams.window)
    }

    pub fn to_snapshot(&self) -> LstmSnapshot {
        LstmSnapshot {
            format_version: SNAPSHOT_VERSION,
            parameter_count: self.params.values.len(),
            model: self.clone(),
        }
    }
}

/// Serialisable parameter artifact with shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmSnapshot {
    pub format_version: u32,
    pub parameter_count: usize,
    pub model: LstmModel,
}

impl LstmSnapshot {
    pub fn into_model(self) -> Result<LstmModel> {
        if self.format_version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {}", self.format_version)));
        }
        if self.parameter_count != self.model.params.values.len() {
            return Err(Error::LengthMismatch { left: self.parameter_count, right: self.model.params.values.len() });
        }
        self.model.params.check()?;
        Ok(self.model)
    }
}

/// Trains on windows of `train`, early-stopping on windows over `val`
/// (whose first targets draw their history from the tail of `train`).
pub fn lstm_fit(train: &[f64], val: &[f64], hp: &LstmHyperparams) -> Result<(LstmModel, TrainingLog)> {
    hp.validate()?;
    if train.len() <= hp.window {
        return Err(Error::InsufficientData { required: hp.window + 1, actual: train.len() });
    }
    if val.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let train_data = make_windows(train, hp.window)?;
    let mut val_series = train[train.len() - hp.window..].to_vec();
    val_series.extend_from_slice(val);
    let val_data = make_windows(&val_series, hp.window)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = LstmParams::init(hp.layers, hp.hidden, &mut rng);
    let mut adam = AdamState::new(params.values.len(), hp.learning_rate);
    let mut stopper = EarlyStopper::new(hp.patience);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut log = TrainingLog { epochs: Vec::new(), best_epoch: 0, best_val_mse: f64::INFINITY, early_stopped: false };
    let mut grad = vec![0.0; params.values.len()];

    for epoch in 1..=hp.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_sse = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let masks: Vec<Option<DropoutMasks>> = batch
                .iter()
                .map(|_| {
                    (hp.dropout > 0.0 && hp.layers > 1)
                        .then(|| DropoutMasks::sample(hp.layers, hp.hidden, hp.window, hp.dropout, &mut rng))
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let per_sample: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|(&k, mask)| {
                    let (pred, cache) = forward_unchecked(&params, train_data.input(k), mask.as_ref());
                    let err = pred - train_data.target(k);
                    let mut g = vec![0.0; params.values.len()];
                    backward_into(&params, &cache, 2.0 * err * scale, &mut g);
                    (err * err, g)
                })
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (sq, g) in &per_sample {
                epoch_sse += sq;
                axpy(1.0, g, &mut grad);
            }
            clip_gradients(&mut grad, hp.clip_norm);
            adam.step(&mut params.values, &grad)?;
        }
        let train_mse = epoch_sse / train_data.len() as f64;
        let val_mse = mse_over(&params, &val_data);
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Numerical(format!(
                "LSTM training diverged at epoch {epoch} (train {train_mse}, val {val_mse})"
            )));
        }
        log.epochs.push(EpochRecord { epoch, train_mse, val_mse });
        if stopper.update(val_mse, &params.values) == StopDecision::Stop {
            log.early_stopped = true;
            break;
        }
    }
    params.values = stopper.best_snapshot.clone();
    log.best_epoch = stopper.best_epoch;
    log.best_val_mse = stopper.best_loss;
    Ok((LstmModel { hyperparams: hp.clone(), params }, log))
}
