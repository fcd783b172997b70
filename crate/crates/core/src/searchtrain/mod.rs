//! The alternating bilevel optimizer at the heart of the layer search.
//!
//! Each iteration, with temperature annealed linearly over the run:
//!
//! 1. sample a relaxed layer distribution `p` from the depth preference
//!    (Gumbel noise + temperature-scaled softmax),
//! 2. mix the positive batch rows across layers, `h_mix = Σ_l p_l·h_l`,
//! 3. **Step 1** — one Adam update of the shared autoencoder on the
//!    reconstruction + ℓ₁ objective over `h_mix` (preference frozen),
//!    then re-clamp decoder column norms,
//! 4. refresh the shared/specificity masks from the full negative set,
//!    encoded with the just-updated dictionary under the same `p`,
//! 5. **Step 2** — recompute the objective on the positive rows and add the
//!    contrastive separability loss; one Adam update of the depth logits
//!    (dictionary frozen, masks treated as constants).
//!
//! The gradient in Step 2 reaches the logits only through the mixing
//! weights: `∂L/∂p_l = Σ_r ⟨∂L/∂h_mix[r], h_l[r]⟩`, pulled through the
//! softmax Jacobian with the recorded noise replayed.
//!
//! A brute-force oracle ([`brute_force_search`]) reruns the same training
//! once per layer with the preference pinned there, scores each layer by
//! what erasure actually achieves on it, and serves as the ground truth the
//! single-run search is judged against.

mod oracle;

pub use oracle::{brute_force_search, stride_search, LayerScore, OracleResult};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actstore::{Label, LayeredActivations};
use crate::conceptsig::{
    build_masks, contrastive_grads, negative_pool, ConceptMasks, NegativePooling, EPSILON_MASK,
};
use crate::depthsel::{DepthPreference, LayerDistribution};
use crate::error::{ClearError, Result};
use crate::numkit::{dot, AdamState, Matrix, RngStream};
use crate::sae::{sae_grads, sae_loss, SparseAutoencoder};

/// RNG stream ids used by one search run (see the allocation table in
/// `numkit::rng`): Gumbel noise, dictionary init, and batch shuffling.
pub const NOISE_STREAM: u64 = 100;
pub const INIT_STREAM: u64 = 101;
pub const BATCH_STREAM: u64 = 102;

/// Logit pinned onto the frozen layer in ablation runs; softmax of this
/// against zeros is one-hot to fifteen digits.
const FROZEN_LOGIT: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// ℓ₁ coefficient in the dictionary objective.
    pub lambda: f64,
    /// Adam learning rate for dictionary parameters (Step 1).
    pub eta_theta: f64,
    /// Adam learning rate for depth logits (Step 2).
    pub eta_alpha: f64,
    /// Instances per batch, half positive and half negative.
    pub batch_size: usize,
    /// Iterations in one run; also the temperature-anneal horizon.
    pub t_max: usize,
    pub tau_max: f64,
    pub tau_min: f64,
    pub seed: u64,
    /// Dictionary width; must be at least the channel width.
    pub d_sae: usize,
    /// Ablation: drop the contrastive term from Step 2 (reconstruction-only
    /// preference updates).
    pub disable_con: bool,
    /// Ablation: pin the layer distribution one-hot here and never update
    /// the logits — plain single-layer dictionary training.
    pub freeze_layer: Option<usize>,
    pub negative_pooling: NegativePooling,
}

impl Default for TrainConfig {
    /// Desk-scale defaults; full-scale hyperparameters go through config.
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            eta_theta: 1e-3,
            eta_alpha: 3e-2,
            batch_size: 16,
            t_max: 600,
            tau_max: 1.0,
            tau_min: 0.1,
            seed: 0,
            d_sae: 256,
            disable_con: false,
            freeze_layer: None,
            negative_pooling: NegativePooling::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, acts: &LayeredActivations) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ClearError::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        for (name, v) in [("eta_theta", self.eta_theta), ("eta_alpha", self.eta_alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ClearError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.t_max == 0 {
            return Err(ClearError::Config("t_max must be positive".into()));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(ClearError::Config(format!(
                "batch size must be even and at least 2, got {}",
                self.batch_size
            )));
        }
        if self.d_sae < acts.d_model() {
            return Err(ClearError::Config(format!(
                "d_sae {} is narrower than the channel width {}",
                self.d_sae,
                acts.d_model()
            )));
        }
        let half = self.batch_size / 2;
        let n_pos = acts.instances_with(Label::Positive).len();
        let n_neg = acts.instances_with(Label::Negative).len();
        if n_pos < half || n_neg < half {
            return Err(ClearError::Config(format!(
                "stratified batches of {half}+{half} need that many instances per class; \
                 dataset has {n_pos} positive / {n_neg} negative"
            )));
        }
        if let Some(j) = self.freeze_layer {
            if j >= acts.num_layers() {
                return Err(ClearError::Config(format!(
                    "freeze layer {j} out of range for {} layers",
                    acts.num_layers()
                )));
            }
        }
        // Temperature bounds are validated by the preference constructor.
        Ok(())
    }
}

/// Weighted row-wise mixture of layer slabs restricted to `rows`:
/// `out[i] = Σ_l p_l · layers[l][rows[i]]`. A weight of exactly one with
/// all others zero returns that layer's rows bit-for-bit.
pub(crate) fn mix_rows(layers: &[Matrix], rows: &[usize], p: &[f64]) -> Result<Matrix> {
    if p.len() != layers.len() {
        return Err(ClearError::Shape {
            op: "mix_activations",
            left: format!("{} layers", layers.len()),
            right: format!("{} weights", p.len()),
        });
    }
    if let Some(j) = p.iter().position(|&w| w == 1.0) {
        if p.iter().enumerate().all(|(k, &w)| k == j || w == 0.0) {
            return Ok(layers[j].select_rows(rows));
        }
    }
    let d = layers[0].cols();
    let mut out = Matrix::zeros(rows.len(), d);
    for (layer, &w) in layers.iter().zip(p) {
        if w == 0.0 {
            continue;
        }
        for (i, &r) in rows.iter().enumerate() {
            let src = layer.row(r);
            for (o, &v) in out.row_mut(i).iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// `h_mix = Σ_l p_l · h_l` over the whole dataset.
pub fn mix_activations(acts: &LayeredActivations, dist: &LayerDistribution) -> Result<Matrix> {
    let rows: Vec<usize> = (0..acts.batch() * acts.tokens()).collect();
    mix_rows(acts.layers(), &rows, dist.probabilities())
}

fn instance_rows(instances: &[usize], tokens: usize) -> Vec<usize> {
    let mut rows = Vec::with_capacity(instances.len() * tokens);
    for &i in instances {
        for t in 0..tokens {
            rows.push(i * tokens + t);
        }
    }
    rows
}

/// Stratified batches without replacement: each class pool is shuffled,
/// consumed in chunks, and reshuffled when a full chunk no longer fits.
struct Batcher {
    pos: Vec<usize>,
    neg: Vec<usize>,
    cursor_pos: usize,
    cursor_neg: usize,
    half: usize,
    rng: RngStream,
}

impl Batcher {
    fn new(mut pos: Vec<usize>, mut neg: Vec<usize>, half: usize, mut rng: RngStream) -> Self {
        rng.shuffle(&mut pos);
        rng.shuffle(&mut neg);
        Batcher {
            pos,
            neg,
            cursor_pos: 0,
            cursor_neg: 0,
            half,
            rng,
        }
    }

    fn draw(pool: &mut [usize], cursor: &mut usize, n: usize, rng: &mut RngStream) -> Vec<usize> {
        if *cursor + n > pool.len() {
            rng.shuffle(pool);
            *cursor = 0;
        }
        let out = pool[*cursor..*cursor + n].to_vec();
        *cursor += n;
        out
    }

    fn next(&mut self) -> (Vec<usize>, Vec<usize>) {
        let pos = Self::draw(&mut self.pos, &mut self.cursor_pos, self.half, &mut self.rng);
        let neg = Self::draw(&mut self.neg, &mut self.cursor_neg, self.half, &mut self.rng);
        (pos, neg)
    }
}

/// Everything one search run mutates.
pub struct TrainState {
    config: TrainConfig,
    pref: DepthPreference,
    sae: SparseAutoencoder,
    adam_w_enc: AdamState,
    adam_b_enc: AdamState,
    adam_w_dec: AdamState,
    adam_logits: AdamState,
    noise_rng: RngStream,
    batcher: Batcher,
    masks: ConceptMasks,
    neg_rows: Vec<usize>,
    sae_grad_steps: usize,
}

impl TrainState {
    pub fn new(config: &TrainConfig, acts: &LayeredActivations) -> Result<Self> {
        config.validate(acts)?;
        let num_layers = acts.num_layers();
        let mut logits = vec![0.0; num_layers];
        if let Some(j) = config.freeze_layer {
            logits[j] = FROZEN_LOGIT;
        }
        let pref =
            DepthPreference::from_logits(logits, config.tau_max, config.tau_min, config.t_max)?;
        let sae = SparseAutoencoder::init(
            acts.d_model(),
            config.d_sae,
            &mut RngStream::new(config.seed, INIT_STREAM),
        )?;
        let enc_len = sae.w_enc().data().len();
        let dec_len = sae.w_dec().data().len();
        let batcher = Batcher::new(
            acts.instances_with(Label::Positive),
            acts.instances_with(Label::Negative),
            config.batch_size / 2,
            RngStream::new(config.seed, BATCH_STREAM),
        );
        Ok(TrainState {
            config: config.clone(),
            pref,
            sae,
            adam_w_enc: AdamState::new(enc_len, config.eta_theta),
            adam_b_enc: AdamState::new(config.d_sae, config.eta_theta),
            adam_w_dec: AdamState::new(dec_len, config.eta_theta),
            adam_logits: AdamState::new(num_layers, config.eta_alpha),
            noise_rng: RngStream::new(config.seed, NOISE_STREAM),
            batcher,
            // Neutral placeholder; the first iteration refreshes masks
            // before anything consumes them.
            masks: ConceptMasks::from_shared(vec![0.0; config.d_sae])?,
            neg_rows: acts.rows_with(Label::Negative),
            sae_grad_steps: 0,
        })
    }

    pub fn sae(&self) -> &SparseAutoencoder {
        &self.sae
    }

    pub fn masks(&self) -> &ConceptMasks {
        &self.masks
    }

    pub fn preference(&self) -> &DepthPreference {
        &self.pref
    }

    pub fn sae_grad_steps(&self) -> usize {
        self.sae_grad_steps
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub tau: f64,
    /// Dictionary loss recomputed in Step 2 (after the Step-1 update).
    pub l_sae: f64,
    pub l_con: f64,
    pub p: Vec<f64>,
}

/// Step-2 evaluation: losses and the preference gradient for one fixed
/// relaxation draw.
#[derive(Debug, Clone)]
pub struct Step2Eval {
    pub l_sae: f64,
    pub l_con: f64,
    /// The objective the logits are updated against (`l_sae` plus `l_con`
    /// unless the contrastive term is disabled).
    pub loss: f64,
    pub d_logits: Vec<f64>,
}

/// Evaluates the outer objective — dictionary loss plus (optionally) the
/// contrastive separability loss on the mixed positive rows — and its
/// gradient with respect to the depth logits, with the dictionary and
/// masks held constant and the given noise replayed.
///
/// This is exactly the quantity Step 2 differentiates; it is public so the
/// logit gradient can be checked against finite differences end to end.
pub fn step2_objective(
    sae: &SparseAutoencoder,
    masks: &ConceptMasks,
    acts: &LayeredActivations,
    pos_rows: &[usize],
    logits: &[f64],
    noise: &[f64],
    tau: f64,
    lambda: f64,
    include_contrastive: bool,
) -> Result<Step2Eval> {
    let dist = LayerDistribution::from_noise(logits, noise.to_vec(), tau)?;
    let x = mix_rows(acts.layers(), pos_rows, dist.probabilities())?;
    let fwd = sae.forward(&x)?;
    let report = sae_loss(&x, &fwd.features, &fwd.reconstruction, lambda)?;
    let con = contrastive_grads(&fwd.features, masks)?;

    let n = x.rows() as f64;
    // Upstream of the reconstruction: ∂/∂ĥ of mean ||ĥ − x||².
    let mut d_h_hat = fwd.reconstruction.clone();
    d_h_hat.add_scaled(&x, -1.0)?;
    d_h_hat.scale(2.0 / n);
    // Upstream of the features: the ℓ₁ subgradient plus (optionally) the
    // contrastive term; the ReLU gate inside backward() silences entries
    // that never fired.
    let mut d_f = Matrix::from_fn(x.rows(), sae.d_sae(), |_, _| lambda / n);
    if include_contrastive {
        d_f.add_scaled(&con.d_features, 1.0)?;
    }
    let back = sae.backward(&x, &fwd, &d_h_hat, &d_f)?;
    // Total gradient w.r.t. the mixed input: encoder path plus the
    // input-as-target path of the reconstruction.
    let mut d_x = back.d_input_enc;
    d_x.add_scaled(&d_h_hat, -1.0)?;

    // Chain through the mixture: ∂L/∂p_l = Σ_r ⟨∂L/∂x[r], h_l[r]⟩.
    let mut upstream = vec![0.0; acts.num_layers()];
    for (l, u) in upstream.iter_mut().enumerate() {
        let layer = acts.layer(l);
        let mut acc = 0.0;
        for (i, &r) in pos_rows.iter().enumerate() {
            acc += dot(d_x.row(i), layer.row(r));
        }
        *u = acc;
    }
    let d_logits = dist.grad(&upstream)?;

    let l_con = con.loss;
    let loss = if include_contrastive {
        report.total + l_con
    } else {
        report.total
    };
    Ok(Step2Eval {
        l_sae: report.total,
        l_con,
        loss,
        d_logits,
    })
}

/// Everything drawn at the top of an iteration: temperature, mixture
/// weights, the replayable noise behind them, and the positive batch.
struct IterationDraw {
    tau: f64,
    p: Vec<f64>,
    noise: Vec<f64>,
    pos_rows: Vec<usize>,
}

fn draw_iteration(
    state: &mut TrainState,
    acts: &LayeredActivations,
    t: usize,
) -> Result<IterationDraw> {
    let tau = state.pref.anneal(t);
    // Relaxed layer distribution for this iteration — or pinned one-hot
    // under the freeze ablation, which draws no noise.
    let (p, noise) = match state.config.freeze_layer {
        Some(j) => {
            let mut p = vec![0.0; acts.num_layers()];
            p[j] = 1.0;
            (p, vec![0.0; acts.num_layers()])
        }
        None => {
            let dist = state.pref.sample_layer_distribution(tau, &mut state.noise_rng)?;
            (dist.probabilities().to_vec(), dist.noise().to_vec())
        }
    };
    let (pos_instances, _neg_instances) = state.batcher.next();
    Ok(IterationDraw {
        tau,
        p,
        noise,
        pos_rows: instance_rows(&pos_instances, acts.tokens()),
    })
}

/// Step 1: one Adam update of the dictionary on the mixed positive rows,
/// preference untouched, followed by the decoder-norm clamp.
fn step1_dictionary_update(
    state: &mut TrainState,
    acts: &LayeredActivations,
    draw: &IterationDraw,
    t: usize,
) -> Result<()> {
    let x_pos = mix_rows(acts.layers(), &draw.pos_rows, &draw.p)?;
    let (back, report) = sae_grads(&state.sae, &x_pos, state.config.lambda)?;
    if !report.total.is_finite() {
        return Err(ClearError::Divergence {
            iteration: t,
            l_sae: report.total,
            l_con: f64::NAN,
        });
    }
    {
        let (w_enc, b_enc, w_dec) = state.sae.params_mut();
        state.adam_w_enc.step(w_enc, back.d_w_enc.data())?;
        state.adam_b_enc.step(b_enc, &back.d_b_enc)?;
        state.adam_w_dec.step(w_dec, back.d_w_dec.data())?;
    }
    state.sae.normalize_decoder_columns();
    state.sae_grad_steps += 1;
    Ok(())
}

/// Mask refresh from the full negative set, encoded with the updated
/// dictionary under the same mixture.
fn refresh_masks(
    state: &mut TrainState,
    acts: &LayeredActivations,
    draw: &IterationDraw,
) -> Result<()> {
    let x_neg = mix_rows(acts.layers(), &state.neg_rows, &draw.p)?;
    let f_neg = state.sae.encode(&x_neg)?;
    let pooled = negative_pool(&f_neg, state.config.negative_pooling)?;
    state.masks = build_masks(&pooled, EPSILON_MASK)?;
    Ok(())
}

/// Step 2: one Adam update of the depth logits against the recomputed
/// objective, dictionary untouched, masks constant. Returns the losses at
/// the pre-update logits. Under the freeze ablation the update is skipped
/// but the objective is still evaluated for the trace.
fn step2_preference_update(
    state: &mut TrainState,
    acts: &LayeredActivations,
    draw: &IterationDraw,
    t: usize,
) -> Result<Step2Eval> {
    let eval = step2_objective(
        &state.sae,
        &state.masks,
        acts,
        &draw.pos_rows,
        state.pref.logits(),
        &draw.noise,
        draw.tau,
        state.config.lambda,
        !state.config.disable_con,
    )?;
    if !eval.l_sae.is_finite() || !eval.l_con.is_finite() {
        return Err(ClearError::Divergence {
            iteration: t,
            l_sae: eval.l_sae,
            l_con: eval.l_con,
        });
    }
    if state.config.freeze_layer.is_none() {
        state
            .adam_logits
            .step(state.pref.logits_mut(), &eval.d_logits)?;
    }
    Ok(eval)
}

/// One full alternating iteration. `acts` must be the same dataset on
/// every call of a run.
pub fn train_step(
    state: &mut TrainState,
    acts: &LayeredActivations,
    t: usize,
) -> Result<IterationRecord> {
    let draw = draw_iteration(state, acts, t)?;
    step1_dictionary_update(state, acts, &draw, t)?;
    refresh_masks(state, acts, &draw)?;
    let eval = step2_preference_update(state, acts, &draw, t)?;
    Ok(IterationRecord {
        iteration: t,
        tau: draw.tau,
        l_sae: eval.l_sae,
        l_con: eval.l_con,
        p: draw.p,
    })
}

/// What a finished run reports.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub selected_layer: usize,
    pub final_logits: Vec<f64>,
    /// Max of the plain softmax (τ=1, no noise) of the final logits — the
    /// "how one-hot did the preference get" statistic.
    pub max_prob: f64,
    pub sae: SparseAutoencoder,
    pub masks: ConceptMasks,
    pub trace: Vec<IterationRecord>,
    pub sae_grad_steps: usize,
    pub wall_clock: f64,
}

/// Runs the full alternating loop and collapses the preference.
pub fn run_search(config: &TrainConfig, acts: &LayeredActivations) -> Result<SearchResult> {
    if acts.num_layers() < 2 {
        return Err(ClearError::Config(
            "layer search needs at least two layers".into(),
        ));
    }
    let start = Instant::now();
    let mut state = TrainState::new(config, acts)?;
    let mut trace = Vec::with_capacity(config.t_max);
    for t in 0..config.t_max {
        trace.push(train_step(&mut state, acts, t)?);
    }
    let final_logits = state.pref.logits().to_vec();
    let flat = LayerDistribution::from_noise(&final_logits, vec![0.0; final_logits.len()], 1.0)?;
    let max_prob = flat
        .probabilities()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SearchResult {
        selected_layer: state.pref.collapse(),
        final_logits,
        max_prob,
        sae: state.sae,
        masks: state.masks,
        trace,
        sae_grad_steps: state.sae_grad_steps,
        wall_clock: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actstore::generate_planted;
    use crate::numkit::{finite_diff_grad, fd::max_rel_error, gumbel_draw};
    use crate::testutil::{monotone_spec, spec_with_profile};

    fn small_config(d_sae: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            t_max: 40,
            d_sae,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_hot_mixture_returns_that_layer_exactly() {
        let spec = monotone_spec(3, 4, 2, 6);
        let acts = generate_planted(&spec, &mut RngStream::new(61, 0)).unwrap();
        let rows: Vec<usize> = (0..8).collect();
        let mixed = mix_rows(acts.layers(), &rows, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(&mixed, acts.layer(1));
    }

    #[test]
    fn uniform_mixture_of_identical_layers_is_that_layer() {
        let slab = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 / 7.0);
        let layers = vec![slab.clone(), slab.clone()];
        let rows: Vec<usize> = (0..4).collect();
        let mixed = mix_rows(&layers, &rows, &[0.5, 0.5]).unwrap();
        for (a, b) in mixed.data().iter().zip(slab.data()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn random_mixture_matches_scalar_recompute() {
        let spec = monotone_spec(4, 4, 2, 5);
        let acts = generate_planted(&spec, &mut RngStream::new(62, 0)).unwrap();
        let p = [0.1, 0.4, 0.3, 0.2];
        let rows = [1usize, 3, 6];
        let mixed = mix_rows(acts.layers(), &rows, &p).unwrap();
        for (i, &r) in rows.iter().enumerate() {
            for c in 0..5 {
                let want: f64 = (0..4).map(|l| p[l] * acts.layer(l).get(r, c)).sum();
                assert!((mixed.get(i, c) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mixture_weight_count_must_match_layers() {
        let spec = monotone_spec(3, 4, 2, 5);
        let acts = generate_planted(&spec, &mut RngStream::new(63, 0)).unwrap();
        assert!(matches!(
            mix_rows(acts.layers(), &[0], &[0.5, 0.5]),
            Err(ClearError::Shape { .. })
        ));
    }

    #[test]
    fn same_seed_runs_are_bit_identical() {
        let spec = monotone_spec(4, 8, 3, 8);
        let acts = generate_planted(&spec, &mut RngStream::new(64, 0)).unwrap();
        let config = small_config(16);
        let a = run_search(&config, &acts).unwrap();
        let b = run_search(&config, &acts).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.final_logits, b.final_logits);
        assert_eq!(a.selected_layer, b.selected_layer);
        assert_eq!(a.sae.w_enc(), b.sae.w_enc());
        assert_eq!(a.sae.b_enc(), b.sae.b_enc());
        assert_eq!(a.sae.w_dec(), b.sae.w_dec());
        assert_eq!(a.masks, b.masks);

        let other = TrainConfig { seed: 8, ..config };
        let c = run_search(&other, &acts).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn traces_have_t_max_entries_and_selected_layer_matches_collapse() {
        let spec = monotone_spec(3, 8, 2, 6);
        let acts = generate_planted(&spec, &mut RngStream::new(65, 0)).unwrap();
        let config = small_config(12);
        let result = run_search(&config, &acts).unwrap();
        assert_eq!(result.trace.len(), config.t_max);
        for (t, rec) in result.trace.iter().enumerate() {
            assert_eq!(rec.iteration, t);
            assert_eq!(rec.p.len(), 3);
            let sum: f64 = rec.p.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
        let pref = DepthPreference::from_logits(result.final_logits.clone(), 1.0, 0.1, 1).unwrap();
        assert_eq!(result.selected_layer, pref.collapse());
    }

    #[test]
    fn frozen_preference_trace_is_constant_one_hot() {
        let spec = monotone_spec(4, 8, 2, 6);
        let acts = generate_planted(&spec, &mut RngStream::new(66, 0)).unwrap();
        let config = TrainConfig {
            freeze_layer: Some(2),
            ..small_config(12)
        };
        let result = run_search(&config, &acts).unwrap();
        for rec in &result.trace {
            let mut want = vec![0.0; 4];
            want[2] = 1.0;
            assert_eq!(rec.p, want);
        }
        assert_eq!(result.selected_layer, 2);
        assert!(result.max_prob > 0.999);
    }

    #[test]
    fn step_one_never_touches_logits_and_step_two_never_touches_weights() {
        let spec = monotone_spec(4, 8, 3, 8);
        let acts = generate_planted(&spec, &mut RngStream::new(67, 0)).unwrap();
        let config = small_config(16);
        let mut state = TrainState::new(&config, &acts).unwrap();
        let mut logits_moved = false;
        for t in 0..10 {
            let draw = draw_iteration(&mut state, &acts, t).unwrap();

            let logits_before = state.pref.logits().to_vec();
            step1_dictionary_update(&mut state, &acts, &draw, t).unwrap();
            refresh_masks(&mut state, &acts, &draw).unwrap();
            assert_eq!(state.pref.logits(), &logits_before[..]);

            let w_enc_before = state.sae.w_enc().clone();
            let b_enc_before = state.sae.b_enc().to_vec();
            let w_dec_before = state.sae.w_dec().clone();
            let masks_before = state.masks.clone();
            step2_preference_update(&mut state, &acts, &draw, t).unwrap();
            assert_eq!(state.sae.w_enc(), &w_enc_before);
            assert_eq!(state.sae.b_enc(), &b_enc_before[..]);
            assert_eq!(state.sae.w_dec(), &w_dec_before);
            assert_eq!(state.masks, masks_before);
            logits_moved |= state.pref.logits() != &logits_before[..];
        }
        assert!(logits_moved, "preference never updated in ten iterations");
    }

    #[test]
    fn gradient_step_counter_equals_t_max() {
        let spec = monotone_spec(3, 8, 2, 6);
        let acts = generate_planted(&spec, &mut RngStream::new(68, 0)).unwrap();
        let config = small_config(12);
        let result = run_search(&config, &acts).unwrap();
        assert_eq!(result.sae_grad_steps, config.t_max);
    }

    #[test]
    fn step2_gradient_matches_finite_differences() {
        // End-to-end: mixing → encoder → reconstruction + ℓ₁ + contrastive
        // → softmax Jacobian, with masks and dictionary frozen and the
        // noise replayed. Uses a dictionary mid-training so the firing
        // pattern is generic.
        let spec = monotone_spec(4, 8, 3, 8);
        let acts = generate_planted(&spec, &mut RngStream::new(69, 0)).unwrap();
        let config = small_config(16);
        let mut state = TrainState::new(&config, &acts).unwrap();
        for t in 0..15 {
            train_step(&mut state, &acts, t).unwrap();
        }
        let pos_rows = acts.rows_with(Label::Positive);
        let mut rng = RngStream::new(70, 0);
        let logits: Vec<f64> = (0..4).map(|_| 0.5 * rng.standard_normal()).collect();
        let noise = gumbel_draw(&mut rng, 4);
        let tau = 0.7;

        for include_con in [true, false] {
            let eval = step2_objective(
                &state.sae,
                &state.masks,
                &acts,
                &pos_rows,
                &logits,
                &noise,
                tau,
                config.lambda,
                include_con,
            )
            .unwrap();
            let f = |x: &[f64]| -> f64 {
                step2_objective(
                    &state.sae,
                    &state.masks,
                    &acts,
                    &pos_rows,
                    x,
                    &noise,
                    tau,
                    config.lambda,
                    include_con,
                )
                .unwrap()
                .loss
            };
            let numeric = finite_diff_grad(f, &logits, 1e-5).unwrap();
            let err = max_rel_error(&eval.d_logits, &numeric);
            assert!(err <= 1e-4, "relative error {err} (contrastive: {include_con})");
        }
    }

    #[test]
    fn contrastive_loss_ranks_the_planted_layer_best_under_any_dictionary() {
        // The property the contrastive term exists for: evaluated one-hot
        // per layer, it grades the planted layer best — even when the
        // dictionary spent its whole budget committed to a wrong layer.
        let mut spec = spec_with_profile(16, 3, 12, vec![0.0, 0.1, 0.8, 0.2]);
        spec.entangle_mix = 0.7;
        let acts = generate_planted(&spec, &mut RngStream::new(71, 0)).unwrap();
        let pos_rows = acts.rows_with(Label::Positive);
        for anchor in [0usize, 2] {
            let config = TrainConfig {
                batch_size: 8,
                t_max: 200,
                d_sae: 24,
                seed: 3,
                freeze_layer: Some(anchor),
                ..TrainConfig::default()
            };
            let result = run_search(&config, &acts).unwrap();
            let l_con_at = |layer: usize| {
                let mut logits = vec![0.0; 4];
                logits[layer] = FROZEN_LOGIT;
                step2_objective(
                    &result.sae,
                    &result.masks,
                    &acts,
                    &pos_rows,
                    &logits,
                    &vec![0.0; 4],
                    1.0,
                    config.lambda,
                    true,
                )
                .unwrap()
                .l_con
            };
            let planted = l_con_at(2);
            for other in [0, 1, 3] {
                assert!(
                    planted < l_con_at(other),
                    "dict@{anchor}: l_con one-hot at planted layer 2 ({planted}) \
                     should beat layer {other} ({})",
                    l_con_at(other)
                );
            }
        }
    }

    #[test]
    fn undersized_class_pool_is_rejected() {
        let spec = monotone_spec(3, 8, 2, 6);
        let acts = generate_planted(&spec, &mut RngStream::new(72, 0)).unwrap();
        let config = TrainConfig {
            batch_size: 10, // needs 5 per class, dataset has 4
            ..small_config(12)
        };
        assert!(matches!(
            run_search(&config, &acts),
            Err(ClearError::Config(_))
        ));
    }

    #[test]
    fn batcher_visits_every_instance_each_epoch() {
        let rng = RngStream::new(5, BATCH_STREAM);
        let mut b = Batcher::new((0..8).collect(), (8..16).collect(), 2, rng);
        let mut seen_pos = Vec::new();
        for _ in 0..4 {
            let (p, n) = b.next();
            assert_eq!(p.len(), 2);
            assert!(n.iter().all(|&i| i >= 8));
            seen_pos.extend(p);
        }
        seen_pos.sort_unstable();
        assert_eq!(seen_pos, (0..8).collect::<Vec<_>>());
    }
}
