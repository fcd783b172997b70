//! Inference-time erasure: subtract the decoded, specificity-masked feature
//! content from activations. The core operator is
//!
//! ```text
//! h' = h − γ · W_dec(encode(h) ⊙ m_spec)
//! ```
//!
//! applied row-wise to a layer slab, with variants for several layers at
//! once (each with its own dictionary and strength), several concepts
//! *within* one layer sharing a single encode pass, and a dense
//! steering-vector baseline that removes a scaled projection instead.
//!
//! Activations are a static dataset — erasing at one layer does not
//! recompute later layers, because nothing downstream consumes them here.
//! Erasure quality is therefore measured directly on the modified slab:
//! energy along the planted directions, plus retrained-probe errors, in
//! [`erasure_report`].

use serde::{Deserialize, Serialize};

use crate::actstore::{Label, LayeredActivations};
use crate::conceptsig::{ConceptMasks, SteeringVector};
use crate::error::{ClearError, Result};
use crate::numkit::{dot, Matrix, RngStream};
use crate::probe::{pooled_probe_error, ProbeConfig, PROBE_STREAM};
use crate::sae::{SparseAutoencoder, SparseFeatures};

/// Stream offset for control-signal probes inside the probe block, keeping
/// them distinct from the target probes at `PROBE_STREAM + layer`.
const CONTROL_PROBE_OFFSET: u64 = 500;

/// One layer's erasure assignment: which dictionary, which masks, how hard.
#[derive(Debug, Clone, Copy)]
pub struct LayerErasePlan<'a> {
    pub layer: usize,
    pub sae: &'a SparseAutoencoder,
    pub masks: &'a ConceptMasks,
    pub gamma: f64,
}

fn validate_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() {
        return Err(ClearError::Config(format!(
            "intervention strength must be finite, got {gamma}"
        )));
    }
    Ok(())
}

fn masked_features(f: &SparseFeatures, mask: &[f64]) -> Result<SparseFeatures> {
    if f.width() != mask.len() {
        return Err(ClearError::Shape {
            op: "feature masking",
            left: format!("{} feature columns", f.width()),
            right: format!("{} mask entries", mask.len()),
        });
    }
    let masked = Matrix::from_fn(f.rows(), f.width(), |r, i| f.values().get(r, i) * mask[i]);
    SparseFeatures::new(masked)
}

/// `h' = h − γ·decode(encode(h) ⊙ m_spec)`, row-wise.
pub fn erase(
    h: &Matrix,
    sae: &SparseAutoencoder,
    masks: &ConceptMasks,
    gamma: f64,
) -> Result<Matrix> {
    validate_gamma(gamma)?;
    let f = sae.encode(h)?;
    let target = sae.decode(&masked_features(&f, masks.m_spec())?)?;
    let mut out = h.clone();
    out.add_scaled(&target, -gamma)?;
    Ok(out)
}

/// Applies an independent [`erase`] at each planned layer; unplanned layers
/// pass through untouched. Each layer may appear at most once.
pub fn erase_multi_layer(
    acts: &LayeredActivations,
    plans: &[LayerErasePlan<'_>],
) -> Result<LayeredActivations> {
    let mut seen = vec![false; acts.num_layers()];
    for plan in plans {
        if plan.layer >= acts.num_layers() {
            return Err(ClearError::Config(format!(
                "erase plan names layer {} but the dataset has {}",
                plan.layer,
                acts.num_layers()
            )));
        }
        if std::mem::replace(&mut seen[plan.layer], true) {
            return Err(ClearError::Config(format!(
                "layer {} appears twice in the erase plan",
                plan.layer
            )));
        }
    }
    let mut out = acts.clone();
    for plan in plans {
        let modified = erase(acts.layer(plan.layer), plan.sae, plan.masks, plan.gamma)?;
        out = out.with_layer_replaced(plan.layer, modified)?;
    }
    Ok(out)
}

/// Multi-concept erasure within one layer, sharing a single encode pass:
/// `h' = h − Σ_c γ_c·decode(f ⊙ m_spec,c)` with `f = encode(h)`.
/// An empty concept list is the identity.
pub fn compose_same_layer(
    h: &Matrix,
    sae: &SparseAutoencoder,
    masks: &[ConceptMasks],
    gammas: &[f64],
) -> Result<Matrix> {
    if masks.len() != gammas.len() {
        return Err(ClearError::Shape {
            op: "compose_same_layer",
            left: format!("{} masks", masks.len()),
            right: format!("{} strengths", gammas.len()),
        });
    }
    let mut out = h.clone();
    if masks.is_empty() {
        return Ok(out);
    }
    let f = sae.encode(h)?;
    for (m, &gamma) in masks.iter().zip(gammas) {
        validate_gamma(gamma)?;
        let target = sae.decode(&masked_features(&f, m.m_spec())?)?;
        out.add_scaled(&target, -gamma)?;
    }
    Ok(out)
}

/// Dense baseline: `h' = h − γ·⟨h, v̂⟩·v̂` per row, with `v̂` the unit
/// steering direction. Projection removal keeps γ in the same units as
/// [`erase`]'s strength.
pub fn steering_erase(h: &Matrix, sv: &SteeringVector, gamma: f64) -> Result<Matrix> {
    validate_gamma(gamma)?;
    if h.cols() != sv.direction().len() {
        return Err(ClearError::Shape {
            op: "steering_erase",
            left: format!("{} channels", h.cols()),
            right: format!("direction of {}", sv.direction().len()),
        });
    }
    let unit = sv.normalized().ok_or_else(|| {
        ClearError::Config("steering vector has zero norm; pools coincide".into())
    })?;
    let mut out = h.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let proj = gamma * row.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>();
        for (x, v) in row.iter_mut().zip(&unit) {
            *x -= proj * v;
        }
    }
    Ok(out)
}

/// Least-squares intervention strength: the γ minimizing the remaining
/// energy along `direction` after erasure over these rows,
/// `γ* = Σ_r ⟨h_r,u⟩⟨Δ_r,u⟩ / Σ_r ⟨Δ_r,u⟩²` with `Δ = decode(encode(h)⊙m_spec)`.
/// Returns 0 when the masked reconstruction carries nothing along the
/// direction (any γ is then equally good; zero is the minimum-norm choice).
pub fn calibrate_gamma(
    h: &Matrix,
    sae: &SparseAutoencoder,
    masks: &ConceptMasks,
    direction: &[f64],
) -> Result<f64> {
    if h.cols() != direction.len() {
        return Err(ClearError::Shape {
            op: "calibrate_gamma",
            left: format!("{} channels", h.cols()),
            right: format!("direction of {}", direction.len()),
        });
    }
    let f = sae.encode(h)?;
    let delta = sae.decode(&masked_features(&f, masks.m_spec())?)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..h.rows() {
        let hu = dot(h.row(r), direction);
        let du = dot(delta.row(r), direction);
        num += hu * du;
        den += du * du;
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Mean squared projection of rows onto a direction.
pub fn direction_energy(h: &Matrix, direction: &[f64]) -> Result<f64> {
    if h.cols() != direction.len() {
        return Err(ClearError::Shape {
            op: "direction_energy",
            left: format!("{} channels", h.cols()),
            right: format!("direction of {}", direction.len()),
        });
    }
    if h.rows() == 0 {
        return Err(ClearError::Config("energy needs at least one row".into()));
    }
    let mut acc = 0.0;
    for r in 0..h.rows() {
        let p = dot(h.row(r), direction);
        acc += p * p;
    }
    Ok(acc / h.rows() as f64)
}

/// Fields that require plant metadata: energies along the planted
/// directions and the control-signal probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub concept_energy_before: f64,
    pub concept_energy_after: f64,
    pub control_energy_before: f64,
    pub control_energy_after: f64,
    pub probe_control_before: f64,
    pub probe_control_after: f64,
}

/// Before/after comparison at one layer. Probe fields are always present;
/// [`DirectionalReport`] needs plant metadata and is `None` without it —
/// callers that require the full report should treat `None` as a
/// configuration error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasureReport {
    pub layer: usize,
    pub probe_target_before: f64,
    pub probe_target_after: f64,
    pub directional: Option<DirectionalReport>,
}

/// Quantifies an intervention at `layer`.
///
/// Concept energy is measured over positive rows only (the planted concept
/// coefficient exists only there; negatives would dilute it with pure
/// noise), control energy over all rows (the control signal spans both
/// classes). Probe errors use a stratified split; before and after reuse
/// the same stream, hence the same split, so the delta isolates the
/// intervention.
pub fn erasure_report(
    before: &LayeredActivations,
    after: &LayeredActivations,
    layer: usize,
    train_fraction: f64,
    seed: u64,
    probe_config: &ProbeConfig,
) -> Result<ErasureReport> {
    if before.num_layers() != after.num_layers()
        || before.batch() != after.batch()
        || before.tokens() != after.tokens()
        || before.d_model() != after.d_model()
    {
        return Err(ClearError::Shape {
            op: "erasure_report",
            left: format!(
                "before {}x{}x{}x{}",
                before.num_layers(),
                before.batch(),
                before.tokens(),
                before.d_model()
            ),
            right: format!(
                "after {}x{}x{}x{}",
                after.num_layers(),
                after.batch(),
                after.tokens(),
                after.d_model()
            ),
        });
    }
    if before.labels() != after.labels() {
        return Err(ClearError::Config(
            "before/after datasets carry different labels".into(),
        ));
    }
    if layer >= before.num_layers() {
        return Err(ClearError::Config(format!(
            "report layer {layer} out of range for {} layers",
            before.num_layers()
        )));
    }

    let keep: Vec<usize> = before
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != Label::Control)
        .map(|(i, _)| i)
        .collect();
    let class: Vec<bool> = keep
        .iter()
        .map(|&i| before.labels()[i] == Label::Positive)
        .collect();

    let probe_at = |acts: &LayeredActivations, labels: &[bool], stream: u64| -> Result<f64> {
        let pooled = acts.pool_tokens(layer).select_rows(&keep);
        let mut rng = RngStream::new(seed, stream);
        Ok(pooled_probe_error(&pooled, labels, train_fraction, probe_config, &mut rng)?.0)
    };
    let target_stream = PROBE_STREAM + layer as u64;
    let probe_target_before = probe_at(before, &class, target_stream)?;
    let probe_target_after = probe_at(after, &class, target_stream)?;

    let directional = match &before.metadata {
        None => None,
        Some(meta) => {
            let pos_rows = before.rows_with(Label::Positive);
            let u = &meta.spec.concept_direction;
            let v = &meta.spec.control_direction;
            let concept_energy_before =
                direction_energy(&before.layer(layer).select_rows(&pos_rows), u)?;
            let concept_energy_after =
                direction_energy(&after.layer(layer).select_rows(&pos_rows), u)?;
            let control_energy_before = direction_energy(before.layer(layer), v)?;
            let control_energy_after = direction_energy(after.layer(layer), v)?;

            let signs: Vec<bool> = keep.iter().map(|&i| meta.control_signs[i] > 0.0).collect();
            let control_stream = PROBE_STREAM + CONTROL_PROBE_OFFSET + layer as u64;
            let probe_control_before = probe_at(before, &signs, control_stream)?;
            let probe_control_after = probe_at(after, &signs, control_stream)?;
            Some(DirectionalReport {
                concept_energy_before,
                concept_energy_after,
                control_energy_before,
                control_energy_after,
                probe_control_before,
                probe_control_after,
            })
        }
    };

    Ok(ErasureReport {
        layer,
        probe_target_before,
        probe_target_after,
        directional,
    })
}
