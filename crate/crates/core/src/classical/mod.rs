//! Classical forecasters: additive Holt-Winters and seasonal ARIMA.
//!
//! Both expose walk-forward one-step-ahead prediction: every forecast is
//! made from the model state before the observation is absorbed, and the
//! true value then updates the state with the parameters held fixed.

mod holt_winters;
mod sarima;

pub use holt_winters::{hw_fit, HoltWintersFit, HoltWintersModel};
pub use sarima::{
    sarima_fit, sarima_select, sarima_select_fit, SarimaFit, SarimaModel, SarimaOrders, SarimaState,
    MIN_EFFECTIVE_OBS,
};

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
