//! Ground-truth layer selection by exhaustive (or strided) retraining.
//!
//! For each candidate layer the oracle pins the depth preference one-hot
//! there, runs the full training budget, and then asks the only question
//! that matters: *how well does erasure work at this layer?* The score is
//! the concept energy removed at that layer as a fraction of the largest
//! pre-erasure concept energy anywhere in the stack, minus the absolute
//! relative change in control energy across all rows, with the
//! intervention strength calibrated per layer. Normalizing by the stack
//! maximum (rather than each layer's own energy) keeps a layer that
//! cleanly wipes a trace amount of concept from outranking one that
//! removes most of a large amount. Ground-truth directions come from the
//! plant metadata, so the oracle only runs on generated data.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actstore::{pool_token_rows, Label, LayeredActivations, PlantMetadata};
use crate::error::{ClearError, Result};
use crate::intervene::{calibrate_gamma, direction_energy, erase};
use crate::numkit::RngStream;
use crate::probe::{pooled_probe_error, ProbeConfig, PROBE_STREAM};
use crate::searchtrain::{run_search, SearchResult, TrainConfig};

/// Score spread below which the table is "flat within noise" and the
/// result is flagged as having no clear optimum. The scores live on a
/// relative-energy scale where a genuinely good layer beats a useless one
/// by well over this margin; a spread under it is indistinguishable from
/// calibration noise on featureless data.
pub const NO_OPTIMUM_SPREAD: f64 = 0.1;

/// Fraction of instances used to train the post-erasure probe.
const PROBE_TRAIN_FRACTION: f64 = 0.8;

/// One layer's scorecard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: usize,
    /// `concept_energy·concept_drop / maxₗ concept_energy − |control_change|`;
    /// higher is better.
    pub erasure_score: f64,
    /// Pre-erasure concept-direction energy on positive rows at this layer.
    pub concept_energy: f64,
    /// Relative concept-energy drop on positive rows, in `[0, 1]` (the
    /// calibrated strength can only reduce energy on its calibration set);
    /// clamped to 0 on layers whose concept energy never rose above the
    /// generator's noise floor.
    pub concept_drop: f64,
    /// Signed relative control-energy change over all rows.
    pub control_change: f64,
    /// Error of a probe retrained on the erased, token-pooled layer.
    pub probe_error_after: f64,
    /// The calibrated intervention strength used for scoring.
    pub gamma: f64,
}

/// Outcome of a brute-force or strided oracle sweep.
#[derive(Debug)]
pub struct OracleResult {
    /// Scores for the layers that trained to completion, in layer order.
    pub scores: Vec<LayerScore>,
    /// The per-layer training runs behind `scores`, same order.
    pub runs: Vec<SearchResult>,
    /// Layers whose training diverged, with the error rendered.
    pub diverged: Vec<(usize, String)>,
    /// Argmax of `erasure_score`; ties break toward the shallower layer.
    pub best_layer: usize,
    /// Trainings attempted (one per candidate layer, diverged included).
    pub trainings: usize,
    /// Dictionary gradient steps across all completed trainings.
    pub sae_grad_steps: usize,
    /// Set when the score spread is below [`NO_OPTIMUM_SPREAD`].
    pub no_clear_optimum: bool,
    pub wall_clock: f64,
}

impl OracleResult {
    pub fn any_diverged(&self) -> bool {
        !self.diverged.is_empty()
    }
}

fn relative_change(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        (after - before) / before
    }
}

/// Trains with the preference frozen at `layer` and scores what erasure
/// there achieves.
fn score_layer(
    config: &TrainConfig,
    acts: &LayeredActivations,
    meta: &PlantMetadata,
    layer: usize,
) -> Result<(LayerScore, SearchResult)> {
    let run_config = TrainConfig {
        freeze_layer: Some(layer),
        ..config.clone()
    };
    let run = run_search(&run_config, acts)?;

    let slab = acts.layer(layer);
    let pos_rows = acts.rows_with(Label::Positive);
    let h_pos = slab.select_rows(&pos_rows);
    let u = &meta.spec.concept_direction;
    let v = &meta.spec.control_direction;

    // A layer whose concept energy sits at the isotropic noise floor has
    // nothing planted there: calibrating a strength against it fits noise,
    // and the resulting "drop" and collateral damage are both meaningless.
    // Score such layers as the zero-strength no-op they warrant.
    let noise_floor = 4.0 * meta.spec.noise_scale * meta.spec.noise_scale;
    let concept_before = direction_energy(&h_pos, u)?;
    let gamma = if concept_before <= noise_floor {
        0.0
    } else {
        calibrate_gamma(&h_pos, &run.sae, &run.masks, u)?
    };
    let erased = erase(slab, &run.sae, &run.masks, gamma)?;
    let erased_pos = erased.select_rows(&pos_rows);

    let concept_drop = if gamma == 0.0 {
        0.0
    } else {
        -relative_change(concept_before, direction_energy(&erased_pos, u)?)
    };
    let control_change = relative_change(
        direction_energy(slab, v)?,
        direction_energy(&erased, v)?,
    );

    let pooled = pool_token_rows(&erased, acts.tokens())?;
    let keep: Vec<usize> = (0..acts.batch())
        .filter(|&i| acts.labels()[i] != Label::Control)
        .collect();
    let labels: Vec<bool> = keep
        .iter()
        .map(|&i| acts.labels()[i] == Label::Positive)
        .collect();
    let (probe_error_after, _, _) = pooled_probe_error(
        &pooled.select_rows(&keep),
        &labels,
        PROBE_TRAIN_FRACTION,
        &ProbeConfig::default(),
        &mut RngStream::new(config.seed, PROBE_STREAM + layer as u64),
    )?;

    Ok((
        LayerScore {
            layer,
            // Finalized by the sweep once the stack-wide maximum is known.
            erasure_score: 0.0,
            concept_energy: concept_before,
            concept_drop,
            control_change,
            probe_error_after,
            gamma,
        },
        run,
    ))
}

fn search_layers(
    config: &TrainConfig,
    acts: &LayeredActivations,
    layers: &[usize],
) -> Result<OracleResult> {
    let meta = acts.metadata.as_ref().ok_or_else(|| {
        ClearError::Config(
            "oracle scoring needs plant metadata (ground-truth directions); \
             generate the dataset with a plant recipe or skip the oracle"
                .into(),
        )
    })?;
    let start = Instant::now();

    // Each layer's training builds its own generators from (seed, stream),
    // so parallel ordering cannot affect any result.
    let outcomes: Vec<(usize, Result<(LayerScore, SearchResult)>)> = layers
        .par_iter()
        .map(|&l| (l, score_layer(config, acts, meta, l)))
        .collect();

    let mut scores = Vec::new();
    let mut runs = Vec::new();
    let mut diverged = Vec::new();
    for (layer, outcome) in outcomes {
        match outcome {
            Ok((score, run)) => {
                scores.push(score);
                runs.push(run);
            }
            Err(e @ ClearError::Divergence { .. }) => diverged.push((layer, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    if scores.is_empty() {
        return Err(ClearError::Config(format!(
            "every candidate layer diverged during oracle training: {:?}",
            diverged
        )));
    }

    let max_energy = scores.iter().map(|s| s.concept_energy).fold(0.0, f64::max);
    for s in &mut scores {
        let removed = if max_energy > 0.0 {
            s.concept_energy * s.concept_drop / max_energy
        } else {
            0.0
        };
        s.erasure_score = removed - s.control_change.abs();
    }

    let mut best_layer = scores[0].layer;
    let mut best = scores[0].erasure_score;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &scores {
        if s.erasure_score > best {
            best = s.erasure_score;
            best_layer = s.layer;
        }
        lo = lo.min(s.erasure_score);
        hi = hi.max(s.erasure_score);
    }

    Ok(OracleResult {
        sae_grad_steps: runs.iter().map(|r| r.sae_grad_steps).sum(),
        best_layer,
        trainings: layers.len(),
        no_clear_optimum: hi - lo < NO_OPTIMUM_SPREAD,
        wall_clock: start.elapsed().as_secs_f64(),
        scores,
        runs,
        diverged,
    })
}

/// One pinned training per layer; the reference the single-run search is
/// judged against. Costs exactly `num_layers` times the search budget.
pub fn brute_force_search(config: &TrainConfig, acts: &LayeredActivations) -> Result<OracleResult> {
    let layers: Vec<usize> = (0..acts.num_layers()).collect();
    search_layers(config, acts, &layers)
}

/// The coarse manual baseline: brute force restricted to layers
/// `{0, stride, 2·stride, …}` — `⌈L/stride⌉` trainings.
pub fn stride_search(
    config: &TrainConfig,
    acts: &LayeredActivations,
    stride: usize,
) -> Result<OracleResult> {
    if stride == 0 {
        return Err(ClearError::Config("stride must be at least 1".into()));
    }
    let layers: Vec<usize> = (0..acts.num_layers()).step_by(stride).collect();
    search_layers(config, acts, &layers)
}
