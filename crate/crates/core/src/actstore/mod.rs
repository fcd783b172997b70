//! Layered activation sets: the data everything else operates on.
//!
//! An activation set holds one `(B·T) × d_model` slab per layer for a batch
//! of `B` labelled instances with `T` tokens each. The synthetic generator
//! plants a known concept direction into the positive instances with a
//! per-layer separability profile, so layer-search and erasure claims can be
//! checked against ground truth instead of eyeballs.
//!
//! Generator anatomy, per instance `i`, token `t`, layer `l`:
//!
//! ```text
//! h = A_l · Σ_j β_j w_j            shared background, same β across layers
//!   + s_i·a_{i,t} · v              control direction, signs balanced per class
//!   + c·g_i·profile_l · u          clean concept, positives only
//!   + c·mix·(1−profile_l)·ζ · (u + w_{l mod k})/√2   blend, positives only
//!   + σ · ε                        fresh isotropic noise per layer
//! ```
//!
//! where `u ⟂ v ⟂ w_j` are orthonormal, `a_{i,t} ≥ 0` gates the control
//! component onto a token subset, and `ζ ≥ 0` is a fresh half-normal draw
//! per (layer, token). The scale `A_l` bulges where the profile is
//! mid-valued, so layers that are mediocre for the concept carry the *most*
//! background energy — a reconstruction-only layer search then has a reason
//! to prefer the wrong layer, which is exactly the failure mode the
//! contrastive loss exists to prevent. The blend term fuses the concept
//! axis with a depth-dependent background partner: at poorly separated
//! layers the concept is only available entangled with background, while the
//! planted layer carries it clean. Because `ζ` is independent across layers
//! and the partner rotates with depth, the concept axis itself stays present
//! in any depth mixture, and class means move only along `u` and the blend.

pub mod format;

use crate::error::{ClearError, Result};
use crate::numkit::{Matrix, RngStream};
use serde::{Deserialize, Serialize};

/// Background directions planted alongside concept and control (capped by
/// the width: there must be room for concept + control + at least one).
const BACKGROUND_DIRS: usize = 6;
/// Peak extra background amplitude at profile 0.5 (the "bulge"): layers
/// with mid-valued separability carry the most background variance, so a
/// purely reconstruction-driven search has a decoy to prefer. The window
/// is cubed so the bulge stays narrow around 0.5 — a strongly planted
/// layer (profile near 1) is barely touched.
const BACKGROUND_BULGE: f64 = 1.5;
/// Magnitude of the per-instance control component.
const CONTROL_SCALE: f64 = 1.0;
/// Probability that a given token carries its instance's control
/// component (amplitude rescaled to keep expected energy fixed). The
/// control direction must not ride on every token: a signal that always
/// co-occurs with the concept is cheaper for an ℓ₁-regularized dictionary
/// to absorb into the concept features than to code separately, and such
/// contaminated features would make any concept-side intervention bleed
/// into the control direction. Token-sparse control breaks the
/// co-occurrence, so joint coding mis-reconstructs the tokens where the
/// two differ and the dictionary keeps them in separate features.
const CONTROL_SPARSITY: f64 = 0.15;
/// Concept units per unit of profile: at full profile the planted
/// direction carries the largest single-direction energy in the batch, so
/// a dictionary picks it up early and the class contrast is unmistakable.
const CONCEPT_SCALE: f64 = 4.0;

/// Per-instance amplitude jitter for the planted components: coefficients
/// vary over `[1−J, 1+J]` so concept and control magnitudes are
/// statistically independent across instances. A dictionary can then only
/// reconstruct them with separate features — a frozen linear blend of the
/// two directions cannot track the varying ratio with one nonnegative
/// coefficient.
const GAIN_JITTER: f64 = 0.5;

/// Probability that a given positive token carries the entangled blend at
/// all. Sparse, spiky co-occurrence (amplitudes rescaled to keep the
/// expected blend energy independent of the sparsity) is what makes the
/// blend a decoy rather than a second clean plant: its mean activation
/// mass stays well below the always-on planted concept of equal energy.
const BLEND_SPARSITY: f64 = 0.2;

/// Probability that a background direction is active on a given token.
const BACKGROUND_SPARSITY: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
    Control,
}

impl Label {
    pub fn to_byte(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
            Label::Control => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Label> {
        match b {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            2 => Some(Label::Control),
            _ => None,
        }
    }
}

/// Recipe for a planted activation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub num_layers: usize,
    pub batch: usize,
    pub tokens: usize,
    pub d_model: usize,
    /// Unit vector the concept is planted along.
    pub concept_direction: Vec<f64>,
    /// Unit vector orthogonal to the concept; carries energy that erasure
    /// must *not* touch.
    pub control_direction: Vec<f64>,
    /// Per-layer separability in [0,1]; the argmax is the planted optimum.
    pub profile: Vec<f64>,
    /// Isotropic noise scale, > 0.
    pub noise_scale: f64,
    /// In [0,1]: how strongly the concept coefficient is entangled with the
    /// background on low-profile layers.
    pub entangle_mix: f64,
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch % 2 != 0 {
            return Err(ClearError::Config(format!(
                "batch must be even to split into positive/negative halves, got {}",
                self.batch
            )));
        }
        if self.batch == 0 || self.tokens == 0 || self.num_layers == 0 {
            return Err(ClearError::Config(
                "batch, tokens, and num_layers must all be positive".into(),
            ));
        }
        if self.d_model < 3 {
            return Err(ClearError::Config(format!(
                "d_model must be at least 3 (concept + control + background), got {}",
                self.d_model
            )));
        }
        if self.concept_direction.len() != self.d_model
            || self.control_direction.len() != self.d_model
        {
            return Err(ClearError::Config(format!(
                "direction length must equal d_model = {}",
                self.d_model
            )));
        }
        let norm_u = norm(&self.concept_direction);
        let norm_v = norm(&self.control_direction);
        if (norm_u - 1.0).abs() > 1e-10 || (norm_v - 1.0).abs() > 1e-10 {
            return Err(ClearError::Config(format!(
                "directions must be unit length: |concept| = {norm_u}, |control| = {norm_v}"
            )));
        }
        let ip: f64 = self
            .concept_direction
            .iter()
            .zip(&self.control_direction)
            .map(|(a, b)| a * b)
            .sum();
        if ip.abs() > 1e-10 {
            return Err(ClearError::Config(format!(
                "concept and control directions must be orthogonal, inner product = {ip}"
            )));
        }
        if self.profile.len() != self.num_layers {
            return Err(ClearError::Config(format!(
                "profile length {} must equal num_layers {}",
                self.profile.len(),
                self.num_layers
            )));
        }
        if self.profile.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ClearError::Config("profile entries must lie in [0,1]".into()));
        }
        if !(self.noise_scale > 0.0) {
            return Err(ClearError::Config(format!(
                "noise_scale must be positive, got {}",
                self.noise_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.entangle_mix) {
            return Err(ClearError::Config(format!(
                "entangle_mix must lie in [0,1], got {}",
                self.entangle_mix
            )));
        }
        Ok(())
    }

    /// Layer with the highest profile value (smallest index on ties).
    pub fn planted_layer(&self) -> usize {
        let mut best = 0;
        for (l, &p) in self.profile.iter().enumerate() {
            if p > self.profile[best] {
                best = l;
            }
        }
        best
    }
}

/// Everything the generator knew, echoed into the file so downstream
/// measurements (energies, probes, oracle scoring) have ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantMetadata {
    pub spec: PlantSpec,
    pub planted_layer: usize,
    /// ±1 per instance: the sign of the control component, balanced within
    /// each label class so class means carry no control signal.
    pub control_signs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredActivations {
    num_layers: usize,
    batch: usize,
    tokens: usize,
    d_model: usize,
    layers: Vec<Matrix>,
    labels: Vec<Label>,
    pub metadata: Option<PlantMetadata>,
}

impl LayeredActivations {
    pub fn new(
        layers: Vec<Matrix>,
        labels: Vec<Label>,
        tokens: usize,
        metadata: Option<PlantMetadata>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(ClearError::Config("need at least one layer".into()));
        }
        let (rows, d_model) = layers[0].shape();
        if tokens == 0 || rows % tokens != 0 {
            return Err(ClearError::Config(format!(
                "slab rows {rows} not divisible by tokens {tokens}"
            )));
        }
        let batch = rows / tokens;
        if labels.len() != batch {
            return Err(ClearError::Config(format!(
                "{} labels for {batch} instances",
                labels.len()
            )));
        }
        for (l, slab) in layers.iter().enumerate() {
            if slab.shape() != (rows, d_model) {
                return Err(ClearError::Shape {
                    op: "LayeredActivations::new",
                    left: format!("layer 0 is {rows}x{d_model}"),
                    right: format!("layer {l} is {}x{}", slab.rows(), slab.cols()),
                });
            }
            if !slab.is_finite() {
                return Err(ClearError::Config(format!(
                    "layer {l} contains non-finite values"
                )));
            }
        }
        Ok(LayeredActivations {
            num_layers: layers.len(),
            batch,
            tokens,
            d_model,
            layers,
            labels,
            metadata,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Instance indices carrying the given label.
    pub fn instances_with(&self, label: Label) -> Vec<usize> {
        (0..self.batch).filter(|&i| self.labels[i] == label).collect()
    }

    /// Slab row indices (instance-major, token-minor) for the given label.
    pub fn rows_with(&self, label: Label) -> Vec<usize> {
        let mut rows = Vec::new();
        for i in 0..self.batch {
            if self.labels[i] == label {
                for t in 0..self.tokens {
                    rows.push(i * self.tokens + t);
                }
            }
        }
        rows
    }

    /// Token-mean pooled view of one layer: `B × d_model`, one row per
    /// instance.
    pub fn pool_tokens(&self, l: usize) -> Matrix {
        pool_token_rows(&self.layers[l], self.tokens)
            .expect("slab shape is a construction invariant")
    }

    /// Replaces one layer's slab (used by interventions, which never touch
    /// the other layers).
    pub fn with_layer_replaced(&self, l: usize, slab: Matrix) -> Result<Self> {
        if slab.shape() != self.layers[l].shape() {
            return Err(ClearError::Shape {
                op: "with_layer_replaced",
                left: format!("{:?}", self.layers[l].shape()),
                right: format!("{:?}", slab.shape()),
            });
        }
        let mut out = self.clone();
        out.layers[l] = slab;
        Ok(out)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Token-mean pools a `(instances·tokens) × d` slab down to one row per
/// instance. Row `i·tokens + t` is token `t` of instance `i`, matching the
/// layout of [`LayeredActivations`] slabs — including slabs that have been
/// modified outside the container (e.g. after an erasure pass).
pub fn pool_token_rows(slab: &Matrix, tokens: usize) -> Result<Matrix> {
    if tokens == 0 || slab.rows() % tokens != 0 {
        return Err(ClearError::Shape {
            op: "pool_token_rows",
            left: format!("{} rows", slab.rows()),
            right: format!("{tokens} tokens per instance"),
        });
    }
    let instances = slab.rows() / tokens;
    let mut out = Matrix::zeros(instances, slab.cols());
    let inv = 1.0 / tokens as f64;
    for i in 0..instances {
        let row = out.row_mut(i);
        for t in 0..tokens {
            for (o, &v) in row.iter_mut().zip(slab.row(i * tokens + t)) {
                *o += v;
            }
        }
        for o in row.iter_mut() {
            *o *= inv;
        }
    }
    Ok(out)
}

/// Draws a random orthonormal (concept, control) pair — convenience for
/// configs that don't pin explicit directions.
pub fn random_direction_pair(d_model: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
    let u = random_unit(d_model, rng, &[]);
    let v = random_unit(d_model, rng, std::slice::from_ref(&u));
    (u, v)
}

/// Random unit vector orthogonal to all of `against` (Gram–Schmidt with
/// deterministic redraw on degeneracy).
fn random_unit(d: usize, rng: &mut RngStream, against: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        for b in against {
            let ip: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (x, c) in v.iter_mut().zip(b) {
                *x -= ip * c;
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            for x in &mut v {
                *x /= n;
            }
            return v;
        }
    }
}

/// Generates a planted activation set. Deterministic given `(spec, rng)`;
/// the first half of the batch is positive, the second half negative.
pub fn generate_planted(spec: &PlantSpec, rng: &mut RngStream) -> Result<LayeredActivations> {
    spec.validate()?;
    let (l_count, b, t_count, d) = (spec.num_layers, spec.batch, spec.tokens, spec.d_model);
    let rows = b * t_count;
    let k = BACKGROUND_DIRS.min(d - 2);

    // Orthonormal background frame, orthogonal to concept and control.
    let mut frame: Vec<Vec<f64>> = vec![
        spec.concept_direction.clone(),
        spec.control_direction.clone(),
    ];
    for _ in 0..k {
        let w = random_unit(d, rng, &frame);
        frame.push(w);
    }
    let background = &frame[2..];

    let labels: Vec<Label> = (0..b)
        .map(|i| if i < b / 2 { Label::Positive } else { Label::Negative })
        .collect();

    // Control signs alternate within each class, so each class mean carries
    // (near-)zero control signal by construction.
    let mut control_signs = vec![0.0; b];
    let mut per_class = [0usize; 2];
    for i in 0..b {
        let class = if labels[i] == Label::Positive { 0 } else { 1 };
        control_signs[i] = if per_class[class] % 2 == 0 { 1.0 } else { -1.0 };
        per_class[class] += 1;
    }

    // Per-instance amplitudes. Control magnitudes and per-token activity
    // gates are drawn once per (+, −) sign pair within a class, so the
    // paired rows cancel exactly and the class mean along the control
    // direction stays at zero by construction even with jitter and
    // token-sparse activity.
    let concept_gain: Vec<f64> =
        (0..b).map(|_| 1.0 + GAIN_JITTER * (2.0 * rng.uniform_open() - 1.0)).collect();
    let mut control_gain = vec![0.0; b];
    let mut control_gate: Vec<Vec<f64>> = vec![Vec::new(); b];
    let mut pending_gain: [Option<(f64, Vec<f64>)>; 2] = [None, None];
    for i in 0..b {
        let class = if labels[i] == Label::Positive { 0 } else { 1 };
        let (gain, gates) = match pending_gain[class].take() {
            Some(pair) => pair,
            None => {
                let gain = 1.0 + GAIN_JITTER * (2.0 * rng.uniform_open() - 1.0);
                let gates: Vec<f64> = (0..t_count)
                    .map(|_| {
                        if rng.uniform_open() < CONTROL_SPARSITY {
                            1.0 / CONTROL_SPARSITY.sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                pending_gain[class] = Some((gain, gates.clone()));
                (gain, gates)
            }
        };
        control_gain[i] = gain;
        control_gate[i] = gates;
    }

    // Background coefficients: one draw per (instance, token, direction),
    // shared across layers so depth only rescales the background. Each
    // direction is present on only a fraction of tokens (amplitudes
    // rescaled to keep the per-direction energy fixed): activations are a
    // sparse superposition, which is what lets a sparse dictionary resolve
    // the background into crisp per-direction features instead of a dense
    // principal-subspace smear.
    let beta = Matrix::from_fn(rows, k, |_, _| {
        if rng.uniform_open() < BACKGROUND_SPARSITY {
            rng.standard_normal() / BACKGROUND_SPARSITY.sqrt()
        } else {
            0.0
        }
    });

    let mut layers = Vec::with_capacity(l_count);
    for l in 0..l_count {
        let p = spec.profile[l];
        let window = 4.0 * p * (1.0 - p);
        let amp = 1.0 + BACKGROUND_BULGE * window * window * window;
        let mut slab = Matrix::zeros(rows, d);
        for i in 0..b {
            let positive = labels[i] == Label::Positive;
            for t in 0..t_count {
                let r = i * t_count + t;
                let row = slab.row_mut(r);
                let betas = beta.row(r);
                for (j, w) in background.iter().enumerate() {
                    let c = amp * betas[j];
                    for (x, &wv) in row.iter_mut().zip(w) {
                        *x += c * wv;
                    }
                }
                let sc = control_signs[i] * control_gain[i] * CONTROL_SCALE * control_gate[i][t];
                if sc != 0.0 {
                    for (x, &vv) in row.iter_mut().zip(&spec.control_direction) {
                        *x += sc * vv;
                    }
                }
                if positive {
                    let direct = CONCEPT_SCALE * concept_gain[i] * p;
                    if k > 0 && spec.entangle_mix > 0.0 {
                        let zeta = if rng.uniform_open() < BLEND_SPARSITY {
                            rng.standard_normal().abs() / BLEND_SPARSITY.sqrt()
                        } else {
                            0.0
                        };
                        let blend = CONCEPT_SCALE * spec.entangle_mix * (1.0 - p) * zeta
                            * std::f64::consts::FRAC_1_SQRT_2;
                        let partner = &background[l % k];
                        for ((x, &uv), &wv) in
                            row.iter_mut().zip(&spec.concept_direction).zip(partner)
                        {
                            *x += direct * uv + blend * (uv + wv);
                        }
                    } else {
                        for (x, &uv) in row.iter_mut().zip(&spec.concept_direction) {
                            *x += direct * uv;
                        }
                    }
                }
                for x in row.iter_mut() {
                    *x += spec.noise_scale * rng.standard_normal();
                }
            }
        }
        layers.push(slab);
    }

    let metadata = PlantMetadata {
        spec: spec.clone(),
        planted_layer: spec.planted_layer(),
        control_signs,
    };
    LayeredActivations::new(layers, labels, t_count, Some(metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_spec(l: usize, b: usize, t: usize, d: usize) -> PlantSpec {
        crate::testutil::monotone_spec(l, b, t, d)
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = test_spec(4, 8, 3, 16);
        let a = generate_planted(&spec, &mut RngStream::new(5, 0)).unwrap();
        let b = generate_planted(&spec, &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(a, b);
        let c = generate_planted(&spec, &mut RngStream::new(6, 0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_split_evenly() {
        let spec = test_spec(3, 10, 2, 8);
        let acts = generate_planted(&spec, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(acts.instances_with(Label::Positive).len(), 5);
        assert_eq!(acts.instances_with(Label::Negative).len(), 5);
    }

    #[test]
    fn odd_batch_is_rejected() {
        let mut spec = test_spec(3, 8, 2, 8);
        spec.batch = 7;
        let err = generate_planted(&spec, &mut RngStream::new(1, 0)).unwrap_err();
        assert!(matches!(err, ClearError::Config(_)));
    }

    #[test]
    fn non_unit_direction_is_rejected() {
        let mut spec = test_spec(3, 8, 2, 8);
        spec.concept_direction[0] += 0.1;
        assert!(matches!(
            generate_planted(&spec, &mut RngStream::new(1, 0)),
            Err(ClearError::Config(_))
        ));
    }

    #[test]
    fn non_orthogonal_directions_are_rejected() {
        let mut spec = test_spec(3, 8, 2, 8);
        spec.control_direction = spec.concept_direction.clone();
        assert!(matches!(
            generate_planted(&spec, &mut RngStream::new(1, 0)),
            Err(ClearError::Config(_))
        ));
    }

    #[test]
    fn zero_profile_leaves_classes_indistinguishable_in_mean() {
        let mut spec = test_spec(3, 64, 4, 16);
        spec.profile = vec![0.0; 3];
        let acts = generate_planted(&spec, &mut RngStream::new(2, 0)).unwrap();
        // With nothing planted, the class mean difference along the concept
        // direction is pure noise: sd = σ·√(2/(B·T/2)).
        for l in 0..3 {
            let diff = class_mean_diff_along(&acts, l, &spec.concept_direction);
            let sd = spec.noise_scale * (2.0_f64 / (64.0 * 4.0 / 2.0)).sqrt();
            assert!(diff.abs() < 5.0 * sd, "layer {l}: diff {diff} vs sd {sd}");
        }
    }

    #[test]
    fn control_direction_carries_no_class_signal() {
        let spec = test_spec(6, 64, 4, 24);
        let acts = generate_planted(&spec, &mut RngStream::new(3, 0)).unwrap();
        let bound = 3.0 * spec.noise_scale / ((64.0 * 4.0 / 2.0) as f64).sqrt();
        for l in 0..acts.num_layers() {
            let diff = class_mean_diff_along(&acts, l, &spec.control_direction);
            assert!(
                diff.abs() < bound,
                "layer {l}: control leakage {diff} exceeds {bound}"
            );
        }
    }

    #[test]
    fn concept_energy_tracks_profile() {
        let mut spec = test_spec(4, 32, 4, 16);
        spec.profile = vec![0.0, 0.3, 0.6, 0.9];
        let acts = generate_planted(&spec, &mut RngStream::new(4, 0)).unwrap();
        let mut prev = -1.0;
        for l in 0..4 {
            let diff = class_mean_diff_along(&acts, l, &spec.concept_direction);
            assert!(diff > prev, "layer {l}: {diff} not above {prev}");
            prev = diff;
        }
    }

    #[test]
    fn pool_tokens_averages_per_instance() {
        let spec = test_spec(2, 4, 3, 8);
        let acts = generate_planted(&spec, &mut RngStream::new(7, 0)).unwrap();
        let pooled = acts.pool_tokens(1);
        assert_eq!(pooled.shape(), (4, 8));
        let slab = acts.layer(1);
        let mut want = 0.0;
        for t in 0..3 {
            want += slab.get(2 * 3 + t, 5);
        }
        want /= 3.0;
        assert!((pooled.get(2, 5) - want).abs() < 1e-15);
    }

    /// Mean over positive rows minus mean over negative rows, projected on a
    /// direction.
    pub(crate) fn class_mean_diff_along(
        acts: &LayeredActivations,
        layer: usize,
        dir: &[f64],
    ) -> f64 {
        let slab = acts.layer(layer);
        let pos = acts.rows_with(Label::Positive);
        let neg = acts.rows_with(Label::Negative);
        let proj = |rows: &[usize]| -> f64 {
            rows.iter()
                .map(|&r| slab.row(r).iter().zip(dir).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
                / rows.len() as f64
        };
        proj(&pos) - proj(&neg)
    }
}
