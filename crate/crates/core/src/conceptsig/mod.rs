//! Concept-signal machinery: masks that split the dictionary into shared
//! and concept-specific features, the separability scores built on them,
//! the contrastive loss that drives the layer search, and the dense
//! steering-vector baseline.
//!
//! The core idea: features that fire on the *negative* set (prompts without
//! the concept) carry semantics the concept merely borrows. Normalizing the
//! pooled negative activations by their maximum gives a shared-ness weight
//! per feature ([`build_masks`]); its complement marks concept-specific
//! features. A layer is a good erasure site when positive activations put
//! their mass on specific features — [`contrastive_loss`] penalizes the
//! opposite.
//!
//! Masks are treated as constants during preference-gradient computation
//! (stop-gradient): the search updates logits against the loss with the
//! dictionary frozen, and letting gradients flow through the max
//! normalization would couple the two in a way nothing downstream expects.

mod sidecar;

pub use sidecar::{read_masks, write_masks};

use crate::error::{ClearError, Result};
use crate::numkit::Matrix;
use crate::sae::SparseFeatures;
use serde::{Deserialize, Serialize};

/// Guard on the max-normalization denominator when building masks.
pub const EPSILON_MASK: f64 = 1e-8;
/// Guard on the score ratio inside the contrastive loss.
pub const EPSILON_CON: f64 = 1e-8;

/// How per-row negative features collapse to one pooled vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativePooling {
    /// Entry-wise mean over rows — batch-size invariant, the default.
    #[default]
    Mean,
    /// Entry-wise maximum over rows.
    Max,
}

/// Complementary feature weights: `m_spec = 1 − m_shared`, entry-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptMasks {
    m_shared: Vec<f64>,
    m_spec: Vec<f64>,
}

impl ConceptMasks {
    /// Builds from the shared mask; the specificity mask is its exact
    /// complement. Entries must lie in `[0, 1]`.
    pub fn from_shared(m_shared: Vec<f64>) -> Result<Self> {
        if m_shared.is_empty() {
            return Err(ClearError::Config("masks need at least one feature".into()));
        }
        if let Some(bad) = m_shared.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ClearError::Config(format!(
                "shared-mask entries must lie in [0,1], found {bad}"
            )));
        }
        let m_spec = m_shared.iter().map(|m| 1.0 - m).collect();
        Ok(ConceptMasks { m_shared, m_spec })
    }

    pub fn m_shared(&self) -> &[f64] {
        &self.m_shared
    }

    pub fn m_spec(&self) -> &[f64] {
        &self.m_spec
    }

    pub fn d_sae(&self) -> usize {
        self.m_shared.len()
    }
}

/// Pools per-row negative-set features into one vector of width `d_sae`.
pub fn negative_pool(rows: &SparseFeatures, pooling: NegativePooling) -> Result<Vec<f64>> {
    let values = rows.values();
    if values.rows() == 0 {
        return Err(ClearError::Config(
            "negative pool needs at least one row".into(),
        ));
    }
    match pooling {
        NegativePooling::Mean => values.mean_rows(),
        NegativePooling::Max => {
            let mut out = vec![f64::NEG_INFINITY; values.cols()];
            for r in 0..values.rows() {
                for (o, v) in out.iter_mut().zip(values.row(r)) {
                    *o = o.max(*v);
                }
            }
            Ok(out)
        }
    }
}

/// Shared mask by max-normalizing the pooled negative activations,
/// `m_shared⁽ⁱ⁾ = f_neg⁽ⁱ⁾ / (max_k f_neg⁽ᵏ⁾ + ε)`, and its complement.
/// An all-zero pool is valid and yields `m_shared = 0` everywhere.
pub fn build_masks(f_neg: &[f64], epsilon: f64) -> Result<ConceptMasks> {
    if f_neg.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ClearError::Config(
            "pooled negative features must be finite and non-negative".into(),
        ));
    }
    let max = f_neg.iter().copied().fold(0.0_f64, f64::max);
    let denom = max + epsilon;
    ConceptMasks::from_shared(f_neg.iter().map(|v| v / denom).collect())
}

/// Mean masked activation energies over a prompt set's positive rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityScores {
    /// Energy on concept-specific features.
    pub s_spe: f64,
    /// Energy on features the negative set also uses.
    pub s_uni: f64,
}

/// `S_spe` and `S_uni`: per-row masked feature sums, averaged over rows.
pub fn separability_scores(
    f_pos: &SparseFeatures,
    masks: &ConceptMasks,
) -> Result<SeparabilityScores> {
    let values = f_pos.values();
    if values.rows() == 0 {
        return Err(ClearError::Config(
            "separability scores need at least one positive row".into(),
        ));
    }
    if values.cols() != masks.d_sae() {
        return Err(ClearError::Shape {
            op: "separability_scores",
            left: format!("{} feature columns", values.cols()),
            right: format!("{} mask entries", masks.d_sae()),
        });
    }
    let mut s_spe = 0.0;
    let mut s_uni = 0.0;
    for r in 0..values.rows() {
        for (i, &f) in values.row(r).iter().enumerate() {
            s_spe += f * masks.m_spec[i];
            s_uni += f * masks.m_shared[i];
        }
    }
    let n = values.rows() as f64;
    Ok(SeparabilityScores {
        s_spe: s_spe / n,
        s_uni: s_uni / n,
    })
}

/// `L_con = ln(1 + S_uni/(S_spe + ε))` — zero exactly when no positive
/// energy lands on shared features, growing as shared energy dominates.
pub fn contrastive_loss(scores: &SeparabilityScores) -> f64 {
    (scores.s_uni / (scores.s_spe + EPSILON_CON)).ln_1p()
}

/// Partials of the contrastive loss: `(∂L/∂S_uni, ∂L/∂S_spe)`.
///
/// With `v = S_spe + ε`: `∂L/∂S_uni = 1/(v + S_uni)` and
/// `∂L/∂S_spe = −S_uni/(v·(v + S_uni))`.
pub fn contrastive_partials(scores: &SeparabilityScores) -> (f64, f64) {
    let v = scores.s_spe + EPSILON_CON;
    let total = v + scores.s_uni;
    (1.0 / total, -scores.s_uni / (v * total))
}

/// Loss, scores, and the gradient of the loss with respect to every
/// positive-row feature entry (masks held constant).
#[derive(Debug, Clone)]
pub struct ContrastiveReport {
    pub scores: SeparabilityScores,
    pub loss: f64,
    /// Same shape as the positive feature matrix; row `r`, entry `i` holds
    /// `∂L_con/∂f[r,i] = (1/n)·(∂L/∂S_uni·m_shared[i] + ∂L/∂S_spe·m_spec[i])`.
    pub d_features: Matrix,
}

/// Forward and backward pass of the contrastive loss in one sweep.
pub fn contrastive_grads(
    f_pos: &SparseFeatures,
    masks: &ConceptMasks,
) -> Result<ContrastiveReport> {
    let scores = separability_scores(f_pos, masks)?;
    let loss = contrastive_loss(&scores);
    let (d_uni, d_spe) = contrastive_partials(&scores);
    let n = f_pos.rows() as f64;
    let per_entry: Vec<f64> = masks
        .m_shared
        .iter()
        .zip(&masks.m_spec)
        .map(|(sh, sp)| (d_uni * sh + d_spe * sp) / n)
        .collect();
    let d_features = Matrix::from_fn(f_pos.rows(), masks.d_sae(), |_, i| per_entry[i]);
    Ok(ContrastiveReport {
        scores,
        loss,
        d_features,
    })
}

/// Mean activation difference between positive and negative pools, kept
/// alongside the pool means it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    direction: Vec<f64>,
    pos_mean: Vec<f64>,
    neg_mean: Vec<f64>,
}

impl SteeringVector {
    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn pos_mean(&self) -> &[f64] {
        &self.pos_mean
    }

    pub fn neg_mean(&self) -> &[f64] {
        &self.neg_mean
    }

    pub fn norm(&self) -> f64 {
        self.direction.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length direction, or `None` when the pools coincide exactly.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        let n = self.norm();
        if n == 0.0 {
            return None;
        }
        Some(self.direction.iter().map(|v| v / n).collect())
    }
}

/// `direction = mean(positive rows) − mean(negative rows)`.
pub fn steering_vector(pos_slab: &Matrix, neg_slab: &Matrix) -> Result<SteeringVector> {
    if pos_slab.cols() != neg_slab.cols() {
        return Err(ClearError::Shape {
            op: "steering_vector",
            left: format!("positive width {}", pos_slab.cols()),
            right: format!("negative width {}", neg_slab.cols()),
        });
    }
    let pos_mean = pos_slab.mean_rows()?;
    let neg_mean = neg_slab.mean_rows()?;
    let direction = pos_mean
        .iter()
        .zip(&neg_mean)
        .map(|(p, n)| p - n)
        .collect();
    Ok(SteeringVector {
        direction,
        pos_mean,
        neg_mean,
    })
}
