//! Soft, learnable selection over layers.
//!
//! A [`DepthPreference`] holds one free logit per layer (the log of the
//! preference weight — optimizing the log removes the positivity
//! constraint with no behavioral difference). Sampling perturbs each logit
//! with Gumbel(0,1) noise and pushes the result through a temperature-scaled
//! softmax:
//!
//! ```text
//! p_k = exp((logit_k + g_k)/τ) / Σ_j exp((logit_j + g_j)/τ)
//! ```
//!
//! High τ gives near-uniform mixtures; as τ anneals linearly toward its
//! floor the distribution sharpens, and at the end of training the soft
//! choice [`collapse`]s to the argmax logit (smallest index on ties, so
//! reports are reproducible).
//!
//! The noise draws are recorded on every [`LayerDistribution`] so the
//! outer-loop gradient can replay the *same* relaxation instance it scored.

use crate::error::{ClearError, Result};
use crate::numkit::{gumbel_draw, RngStream};

/// Probabilities below this are floored (then renormalized) so even absurdly
/// cold temperatures keep every entry strictly positive.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct DepthPreference {
    logits: Vec<f64>,
    pub tau_max: f64,
    pub tau_min: f64,
    pub t_max: usize,
}

impl DepthPreference {
    /// Uniform preferences (all logits zero) over `num_layers` layers.
    pub fn new(num_layers: usize, tau_max: f64, tau_min: f64, t_max: usize) -> Result<Self> {
        Self::from_logits(vec![0.0; num_layers], tau_max, tau_min, t_max)
    }

    pub fn from_logits(
        logits: Vec<f64>,
        tau_max: f64,
        tau_min: f64,
        t_max: usize,
    ) -> Result<Self> {
        if logits.is_empty() {
            return Err(ClearError::Config("need at least one layer".into()));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(ClearError::Config("logits must be finite".into()));
        }
        if !(tau_min > 0.0) || tau_max < tau_min {
            return Err(ClearError::Config(format!(
                "need tau_max ≥ tau_min > 0, got ({tau_max}, {tau_min})"
            )));
        }
        if t_max == 0 {
            return Err(ClearError::Config("iteration horizon must be positive".into()));
        }
        Ok(DepthPreference {
            logits,
            tau_max,
            tau_min,
            t_max,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Temperature at iteration `t`: linear from `tau_max` at 0 to `tau_min`
    /// at `t_max`. Iterations past the horizon clamp to the floor (the
    /// training loop never exceeds it, so overflow is benign) and log a
    /// warning rather than erroring.
    pub fn anneal(&self, t: usize) -> f64 {
        if t > self.t_max {
            log::warn!(
                "anneal called past the horizon (t = {t} > {}), clamping to tau_min",
                self.t_max
            );
            return self.tau_min;
        }
        self.tau_max - (self.tau_max - self.tau_min) * (t as f64 / self.t_max as f64)
    }

    /// Fresh Gumbel noise, one relaxed sample.
    pub fn sample_layer_distribution(
        &self,
        tau: f64,
        rng: &mut RngStream,
    ) -> Result<LayerDistribution> {
        let noise = gumbel_draw(rng, self.logits.len());
        LayerDistribution::from_noise(&self.logits, noise, tau)
    }

    /// Deterministic choice: the argmax logit, smallest index on ties.
    pub fn collapse(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.logits.iter().enumerate() {
            if v > self.logits[best] {
                best = k;
            }
        }
        best
    }
}

/// One relaxed sample: probabilities plus the noise that produced them.
#[derive(Debug, Clone)]
pub struct LayerDistribution {
    probabilities: Vec<f64>,
    temperature: f64,
    noise: Vec<f64>,
}

impl LayerDistribution {
    /// Softmax of `(logits + noise)/τ` with max-subtraction for stability.
    /// Public so gradient checks and the outer training step can replay a
    /// recorded noise vector against perturbed logits.
    pub fn from_noise(logits: &[f64], noise: Vec<f64>, tau: f64) -> Result<Self> {
        if noise.len() != logits.len() {
            return Err(ClearError::Shape {
                op: "layer distribution",
                left: format!("{} logits", logits.len()),
                right: format!("{} noise draws", noise.len()),
            });
        }
        if !(tau > 0.0) {
            return Err(ClearError::Config(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        let scores: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l + g).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Max-subtraction guarantees one term is exp(0) = 1, so the sum is
        // in [1, L] and can neither overflow nor vanish.
        let mut p: Vec<f64> = scores.iter().map(|s| ((s - m) / tau).exp()).collect();
        let sum: f64 = p.iter().sum();
        for v in &mut p {
            *v = (*v / sum).max(PROB_FLOOR);
        }
        let sum2: f64 = p.iter().sum();
        for v in &mut p {
            *v /= sum2;
            // At extreme saturation the top entry can round to exactly 1.0;
            // nudge it one ulp down so every entry stays inside (0, 1).
            if *v >= 1.0 {
                *v = 1.0_f64.next_down();
            }
        }
        Ok(LayerDistribution {
            probabilities: p,
            temperature: tau,
            noise,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.probabilities.iter().enumerate() {
            if v > self.probabilities[best] {
                best = k;
            }
        }
        best
    }

    /// Pulls an upstream gradient `∂L/∂p` back to the logits:
    /// `∂L/∂logit_k = (p_k/τ)·(u_k − Σ_j p_j·u_j)`.
    pub fn grad(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.probabilities.len() {
            return Err(ClearError::Shape {
                op: "distribution_grad",
                left: format!("{} probabilities", self.probabilities.len()),
                right: format!("{} upstream entries", upstream.len()),
            });
        }
        let inner: f64 = self
            .probabilities
            .iter()
            .zip(upstream)
            .map(|(p, u)| p * u)
            .sum();
        Ok(self
            .probabilities
            .iter()
            .zip(upstream)
            .map(|(p, u)| p / self.temperature * (u - inner))
            .collect())
    }
}
