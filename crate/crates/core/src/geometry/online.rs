//! Running estimate of a language vector while model parameters change.
//!
//! With enhancement factor `η ≥ 1` the estimate after `t` batch means `u₁..u_t` is the
//! `η^(i−1)`-weighted average of the `uᵢ`, which unrolls into
//! `v̂_{t+1} = w_new(t)·u_{t+1} + w_old(t)·v̂_t` with `w_new(t) = ηᵗ / Σ_{i=0..t} ηⁱ`.
//! The default fixes `w_new = 1/4, w_old = 3/4` (the `t → ∞` limit for `η = 4/3`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_W_NEW: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UpdateWeights {
    Fixed { w_new: f64 },
    Eta { eta: f64 },
}

impl Default for UpdateWeights {
    fn default() -> Self {
        UpdateWeights::Fixed {
            w_new: DEFAULT_W_NEW,
        }
    }
}

impl UpdateWeights {
    fn validate(&self) -> Result<()> {
        match *self {
            UpdateWeights::Fixed { w_new } if !(w_new > 0.0 && w_new < 1.0) => Err(
                Error::InvalidInput(format!("w_new must lie in (0, 1), got {w_new}")),
            ),
            UpdateWeights::Eta { eta } if !(eta >= 1.0 && eta.is_finite()) => Err(
                Error::InvalidInput(format!("eta must be finite and ≥ 1, got {eta}")),
            ),
            _ => Ok(()),
        }
    }

    /// `(w_new, w_old)` for the update following `t` previous updates.
    pub fn at(&self, t: usize) -> (f64, f64) {
        match *self {
            UpdateWeights::Fixed { w_new } => (w_new, 1.0 - w_new),
            UpdateWeights::Eta { eta } => {
                // ηᵗ / Σ_{i=0..t} ηⁱ = 1 / Σ_{j=0..t} η⁻ʲ, which cannot overflow.
                let inv = 1.0 / eta;
                let mut denom = 0.0;
                let mut p = 1.0;
                for _ in 0..=t {
                    denom += p;
                    p *= inv;
                }
                let w_new = 1.0 / denom;
                (w_new, 1.0 - w_new)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineVectorEstimator {
    pub current: Vec<f64>,
    pub step: usize,
    pub weights: UpdateWeights,
}

impl OnlineVectorEstimator {
    pub fn new(initial: Vec<f64>, weights: UpdateWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            current: initial,
            step: 0,
            weights,
        })
    }

    pub fn with_default_weights(initial: Vec<f64>) -> Self {
        Self {
            current: initial,
            step: 0,
            weights: UpdateWeights::default(),
        }
    }

    pub fn update(&mut self, u: &[f64]) -> Result<()> {
        if u.len() != self.current.len() {
            return Err(Error::DimensionMismatch {
                context: "online estimator input",
                expected: self.current.len(),
                actual: u.len(),
            });
        }
        let (w_new, w_old) = self.weights.at(self.step);
        for (v, x) in self.current.iter_mut().zip(u) {
            // Exact fixed point: v = u stays v.
            *v = if *v == *x { *v } else { w_new * x + w_old * *v };
        }
        self.step += 1;
        Ok(())
    }
}

/// Functional form of [`OnlineVectorEstimator::update`].
pub fn online_update(est: &OnlineVectorEstimator, u: &[f64]) -> Result<OnlineVectorEstimator> {
    let mut next = est.clone();
    next.update(u)?;
    Ok(next)
}
