//! Bias-corrected Adam and patience-based early stopping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite())
            || !unit(self.beta1)
            || !unit(self.beta2)
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Step counter; the per-parameter moments live in the [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
}

impl AdamState {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AdamState { cfg, t: 0 })
    }
}

/// One update from the accumulated gradients, which are zeroed afterwards.
/// Nothing is modified when any gradient is non-finite.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState) -> Result<()> {
    if let Some((name, _)) = store
        .params()
        .find(|(_, p)| p.grad.data().iter().any(|g| !g.is_finite()))
    {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    state.t += 1;
    let c = state.cfg;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let one = T::one();
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let bc1 = T::lit(1.0 - c.beta1.powi(t));
    let bc2 = T::lit(1.0 - c.beta2.powi(t));
    let lr = T::lit(c.lr);
    let eps = T::lit(c.eps);
    for (_, p) in store.params_mut() {
        let grads = p.grad.data().to_vec();
        for (m, &g) in p.adam_m.data_mut().iter_mut().zip(&grads) {
            *m = b1 * *m + (one - b1) * g;
        }
        for (v, &g) in p.adam_v.data_mut().iter_mut().zip(&grads) {
            *v = b2 * *v + (one - b2) * g * g;
        }
        let (m, v) = (p.adam_m.data().to_vec(), p.adam_v.data().to_vec());
        for ((w, &m), &v) in p.value.data_mut().iter_mut().zip(&m).zip(&v) {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.zero_grads();
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best_metric: Option<f64>,
    pub epochs_since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub const DEFAULT_PATIENCE: usize = 32;

    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_metric: None,
            epochs_since_best: 0,
        }
    }

    /// Records one epoch's validation metric (higher is better).
    pub fn observe(&mut self, metric: f64) -> StopDecision {
        let improved = self.best_metric.is_none_or(|b| metric > b);
        if improved {
            self.best_metric = Some(metric);
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.epochs_since_best > self.patience,
        }
    }
}

impl Default for EarlyStopper {
    fn default() -> Self {
        EarlyStopper::new(Self::DEFAULT_PATIENCE)
    }
}
