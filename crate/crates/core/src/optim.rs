//! Optimisation primitives: Nelder-Mead for the classical models, Adam with
//! norm clipping and an early-stopping controller for the LSTM.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub max_iters: usize,
    pub x_tol: f64,
    pub f_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_iters: 500, x_tol: 1e-6, f_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Derivative-free simplex minimisation. Non-finite objective values away
/// from `x0` are treated as +inf so the search steps back from them.
pub fn nelder_mead<F>(mut objective: F, x0: &[f64], opts: &SimplexOptions) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let f0 = objective(x0);
    if !f0.is_finite() {
        return Err(Error::Numerical(format!("objective is {f0} at the starting point")));
    }
    let dim = x0.len();
    if dim == 0 {
        return Ok(SimplexResult { x: Vec::new(), value: f0, iterations: 0, converged: true });
    }
    let mut eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += 0.1 * x0[i].abs().max(1.0);
        let v = eval(&x);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let worst_value = simplex[dim].1;
        let spread = worst_value - best.1;
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if diameter < opts.x_tol && spread < opts.f_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / dim as f64;
            }
        }
        let along = |coef: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + coef * (c - w)).collect()
        };

        let worst = simplex[dim].0.clone();
        let reflected = along(REFLECT, &worst);
        let f_reflected = eval(&reflected);
        if f_reflected < simplex[0].1 {
            let expanded = along(EXPAND, &worst);
            let f_expanded = eval(&expanded);
            simplex[dim] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < simplex[dim - 1].1 {
            simplex[dim] = (reflected, f_reflected);
            continue;
        }
        let (contracted, f_contracted) = if f_reflected < worst_value {
            let x = along(CONTRACT, &worst);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(-CONTRACT, &worst);
            let v = eval(&x);
            (x, v)
        };
        if f_contracted < worst_value.min(f_reflected) {
            simplex[dim] = (contracted, f_contracted);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for (x, v) in simplex[1..].iter_mut() {
            for (xi, a) in x.iter_mut().zip(&anchor) {
                *xi = a + SHRINK * (*xi - a);
            }
            *v = eval(x);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Ok(SimplexResult { x, value, iterations, converged })
}

/// Rescales `grads` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        crate::error::ensure_same_len(params.len(), grads.len())?;
        crate::error::ensure_same_len(params.len(), self.first_moment.len())?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Ties within this margin do not count as improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best_loss: f64,
    pub epochs_since_best: usize,
    pub best_snapshot: Vec<f64>,
    /// Number of updates seen when the best loss was recorded (1-based).
    pub best_epoch: usize,
    updates: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_loss: f64::INFINITY,
            epochs_since_best: 0,
            best_snapshot: Vec::new(),
            best_epoch: 0,
            updates: 0,
        }
    }

    pub fn update(&mut self, val_loss: f64, params: &[f64]) -> StopDecision {
        self.updates += 1;
        if val_loss < self.best_loss - IMPROVEMENT_TOL {
            self.best_loss = val_loss;
            self.epochs_since_best = 0;
            self.best_epoch = self.updates;
            self.best_snapshot.clear();
            self.best_snapshot.extend_from_slice(params);
            StopDecision::Continue
        } else {
            self.epochs_since_best += 1;
            if self.epochs_since_best > self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}
