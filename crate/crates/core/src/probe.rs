//! Layer-wise linear probes: logistic regression on token-mean-pooled
//! activations, measuring how linearly separable the concept classes are at
//! each depth. The resulting error-vs-depth curve locates concept signal
//! independently of the autoencoder pipeline, and the before/after probe
//! errors quantify what an intervention removed.
//!
//! Training is plain full-batch gradient descent from a zero start — no
//! randomness, so a probe is a pure function of its training rows. The only
//! seeded choice is the train/test split, drawn from the probe block of the
//! stream allocation table (see `numkit::rng`), one stream per layer, so
//! curves are identical no matter how layers are scheduled.

use crate::actstore::{Label, LayeredActivations};
use crate::error::{ClearError, Result};
use crate::numkit::{Matrix, RngStream};

/// First RNG stream id of the probe block; layer `l` uses `PROBE_STREAM + l`.
pub const PROBE_STREAM: u64 = 2000;

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// L2 penalty on the weights (not the bias); zero disables it.
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            learning_rate: 0.1,
            iterations: 500,
            l2: 0.0,
        }
    }
}

/// A trained logistic-regression probe. Only [`train_probe`] constructs
/// one, so holding a `LinearProbe` implies training has happened.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    weights: Vec<f64>,
    bias: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub final_loss: f64,
}

impl LinearProbe {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// P(positive) for one pooled row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.score(row))
    }

    fn score(&self, row: &[f64]) -> f64 {
        self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Fraction of rows whose thresholded prediction disagrees with the
    /// label.
    pub fn error_rate(&self, rows: &Matrix, labels: &[bool]) -> Result<f64> {
        if rows.rows() != labels.len() {
            return Err(ClearError::Shape {
                op: "probe error_rate",
                left: format!("{} rows", rows.rows()),
                right: format!("{} labels", labels.len()),
            });
        }
        if labels.is_empty() {
            return Err(ClearError::Config("error_rate needs at least one row".into()));
        }
        let mut wrong = 0usize;
        for (r, &y) in labels.iter().enumerate() {
            let predicted = self.score(rows.row(r)) >= 0.0;
            if predicted != y {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / labels.len() as f64)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss and its gradient for weights-plus-bias.
/// Exposed within the crate so the finite-difference oracle can check it.
pub(crate) fn logistic_loss_grad(
    weights: &[f64],
    bias: f64,
    rows: &Matrix,
    labels: &[bool],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = rows.rows() as f64;
    let mut loss = 0.0;
    let mut g_w = vec![0.0; weights.len()];
    let mut g_b = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = rows.row(r);
        let z: f64 = weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + bias;
        let y = if label { 1.0 } else { 0.0 };
        loss += softplus(z) - y * z;
        let residual = (sigmoid(z) - y) / n;
        for (g, x) in g_w.iter_mut().zip(row) {
            *g += residual * x;
        }
        g_b += residual;
    }
    loss /= n;
    if l2 > 0.0 {
        // (l2/2)·||w||², bias excluded.
        for (g, w) in g_w.iter_mut().zip(weights) {
            loss += 0.5 * l2 * w * w;
            *g += l2 * w;
        }
    }
    (loss, g_w, g_b)
}

/// Fits a logistic-regression probe by full-batch gradient descent.
/// Requires both classes in the training rows.
pub fn train_probe(rows: &Matrix, labels: &[bool], config: &ProbeConfig) -> Result<LinearProbe> {
    if rows.rows() != labels.len() {
        return Err(ClearError::Shape {
            op: "train_probe",
            left: format!("{} rows", rows.rows()),
            right: format!("{} labels", labels.len()),
        });
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(ClearError::Config(
            "probe training needs both classes present".into(),
        ));
    }
    let mut weights = vec![0.0; rows.cols()];
    let mut bias = 0.0;
    let mut loss = f64::NAN;
    for _ in 0..config.iterations {
        let (l, g_w, g_b) = logistic_loss_grad(&weights, bias, rows, labels, config.l2);
        loss = l;
        for (w, g) in weights.iter_mut().zip(&g_w) {
            *w -= config.learning_rate * g;
        }
        bias -= config.learning_rate * g_b;
    }
    Ok(LinearProbe {
        weights,
        bias,
        iterations: config.iterations,
        learning_rate: config.learning_rate,
        final_loss: loss,
    })
}

/// Stratified split of pooled rows, one probe, held-out error.
/// Returns `(error, n_train, n_test)`.
pub fn pooled_probe_error(
    pooled: &Matrix,
    labels: &[bool],
    train_fraction: f64,
    config: &ProbeConfig,
    rng: &mut RngStream,
) -> Result<(f64, usize, usize)> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(ClearError::Config(format!(
            "train fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(ClearError::Config(
            "stratified split needs at least two instances per class".into(),
        ));
    }
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let cut = |v: &[usize]| -> usize {
        ((train_fraction * v.len() as f64).round() as usize).clamp(1, v.len() - 1)
    };
    let (pc, nc) = (cut(&pos), cut(&neg));
    let train_idx: Vec<usize> = pos[..pc].iter().chain(&neg[..nc]).copied().collect();
    let test_idx: Vec<usize> = pos[pc..].iter().chain(&neg[nc..]).copied().collect();

    let gather = |idx: &[usize]| -> (Matrix, Vec<bool>) {
        (
            pooled.select_rows(idx),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (train_rows, train_labels) = gather(&train_idx);
    let (test_rows, test_labels) = gather(&test_idx);
    let probe = train_probe(&train_rows, &train_labels, config)?;
    let error = probe.error_rate(&test_rows, &test_labels)?;
    Ok((error, train_idx.len(), test_idx.len()))
}

/// Held-out probe error at every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCurve {
    pub errors: Vec<f64>,
    pub n_train: Vec<usize>,
    pub n_test: Vec<usize>,
}

impl ProbeCurve {
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.errors.iter().enumerate() {
            if v < self.errors[best] {
                best = k;
            }
        }
        best
    }
}

/// One probe per layer on token-mean-pooled instances: 80/20-style
/// stratified split (the fraction is the caller's), trained on the train
/// side, scored on the held-out side. Control-labeled instances are
/// excluded. Layer `l` splits with stream `PROBE_STREAM + l`, so the curve
/// does not depend on evaluation order.
pub fn probe_curve(
    acts: &LayeredActivations,
    train_fraction: f64,
    seed: u64,
    config: &ProbeConfig,
) -> Result<ProbeCurve> {
    let keep: Vec<usize> = acts
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != Label::Control)
        .map(|(i, _)| i)
        .collect();
    let labels: Vec<bool> = keep
        .iter()
        .map(|&i| acts.labels()[i] == Label::Positive)
        .collect();

    let mut errors = Vec::with_capacity(acts.num_layers());
    let mut n_train = Vec::with_capacity(acts.num_layers());
    let mut n_test = Vec::with_capacity(acts.num_layers());
    for l in 0..acts.num_layers() {
        let pooled = acts.pool_tokens(l).select_rows(&keep);
        let mut rng = RngStream::new(seed, PROBE_STREAM + l as u64);
        let (err, tr, te) = pooled_probe_error(&pooled, &labels, train_fraction, config, &mut rng)?;
        errors.push(err);
        n_train.push(tr);
        n_test.push(te);
    }
    Ok(ProbeCurve {
        errors,
        n_train,
        n_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actstore::generate_planted;
    use crate::numkit::{finite_diff_grad, fd::max_rel_error};
    use crate::testutil::{monotone_spec, spec_with_profile};

    #[test]
    fn separable_points_reach_zero_training_error() {
        let rows = Matrix::from_vec(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let labels = [true, false];
        let probe = train_probe(&rows, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(probe.error_rate(&rows, &labels).unwrap(), 0.0);
        assert!(probe.predict(&[1.0, 0.0]) > 0.5);
        assert!(probe.predict(&[-1.0, 0.0]) < 0.5);
    }

    #[test]
    fn featureless_data_scores_chance_on_holdout() {
        // Every row identical: the probe can only predict a constant, so
        // held-out error on a balanced split is exactly one half.
        let pooled = Matrix::from_fn(40, 3, |_, _| 0.7);
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let mut rng = RngStream::new(3, PROBE_STREAM);
        let (err, n_tr, n_te) =
            pooled_probe_error(&pooled, &labels, 0.8, &ProbeConfig::default(), &mut rng).unwrap();
        assert!((err - 0.5).abs() <= 0.05, "error {err}");
        assert_eq!(n_tr, 32);
        assert_eq!(n_te, 8);
    }

    #[test]
    fn single_class_is_a_config_error() {
        let rows = Matrix::from_fn(4, 2, |r, c| (r + c) as f64);
        assert!(matches!(
            train_probe(&rows, &[true; 4], &ProbeConfig::default()),
            Err(ClearError::Config(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(44, 0);
        let rows = Matrix::from_fn(6, 4, |_, _| rng.standard_normal());
        let labels = [true, false, true, true, false, false];
        for l2 in [0.0, 0.03] {
            let w: Vec<f64> = (0..4).map(|_| 0.3 * rng.standard_normal()).collect();
            let b = 0.1;
            let (_, g_w, g_b) = logistic_loss_grad(&w, b, &rows, &labels, l2);
            let mut analytic = g_w.clone();
            analytic.push(g_b);

            let packed: Vec<f64> = w.iter().copied().chain([b]).collect();
            let f = |x: &[f64]| logistic_loss_grad(&x[..4], x[4], &rows, &labels, l2).0;
            let numeric = finite_diff_grad(f, &packed, 1e-6).unwrap();
            let err = max_rel_error(&analytic, &numeric);
            assert!(err <= 1e-4, "relative error {err} at l2 {l2}");
        }
    }

    #[test]
    fn curve_minimum_sits_at_the_one_hot_layer() {
        let mut profile = vec![0.0; 8];
        profile[5] = 0.9;
        let spec = spec_with_profile(64, 4, 16, profile);
        let acts = generate_planted(&spec, &mut RngStream::new(11, 2)).unwrap();
        let curve = probe_curve(&acts, 0.8, 11, &ProbeConfig::default()).unwrap();
        assert_eq!(curve.argmin(), 5, "curve {:?}", curve.errors);
        assert!(curve.errors[5] <= 0.05);
    }

    #[test]
    fn zero_profile_data_probes_at_chance_everywhere() {
        let spec = spec_with_profile(256, 2, 12, vec![0.0; 4]);
        let acts = generate_planted(&spec, &mut RngStream::new(12, 2)).unwrap();
        let curve = probe_curve(&acts, 0.8, 12, &ProbeConfig::default()).unwrap();
        for (l, err) in curve.errors.iter().enumerate() {
            assert!((0.4..=0.6).contains(err), "layer {l} error {err}");
        }
    }

    #[test]
    fn label_permutation_null_band() {
        // Averaged over label shuffles, every layer's error sits in the
        // chance band.
        let spec = monotone_spec(3, 64, 3, 10);
        let acts = generate_planted(&spec, &mut RngStream::new(13, 2)).unwrap();
        let mut shuffler = RngStream::new(13, 7);
        let mut sums = vec![0.0; 3];
        let shuffles = 20;
        for round in 0..shuffles {
            let mut labels = acts.labels().to_vec();
            shuffler.shuffle(&mut labels);
            let permuted = LayeredActivations::new(
                acts.layers().to_vec(),
                labels,
                acts.tokens(),
                None,
            )
            .unwrap();
            let curve = probe_curve(&permuted, 0.8, 1000 + round, &ProbeConfig::default()).unwrap();
            for (s, e) in sums.iter_mut().zip(&curve.errors) {
                *s += e;
            }
        }
        for (l, s) in sums.iter().enumerate() {
            let mean = s / shuffles as f64;
            assert!((0.4..=0.6).contains(&mean), "layer {l} mean error {mean}");
        }
    }

    #[test]
    fn same_seed_reproduces_the_curve_bitwise() {
        let spec = monotone_spec(4, 32, 3, 8);
        let acts = generate_planted(&spec, &mut RngStream::new(14, 2)).unwrap();
        let a = probe_curve(&acts, 0.8, 21, &ProbeConfig::default()).unwrap();
        let b = probe_curve(&acts, 0.8, 21, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = probe_curve(&acts, 0.8, 22, &ProbeConfig::default()).unwrap();
        assert!(a.errors != c.errors || a == c); // different seed may move errors
    }

    /// Spearman rank correlation with average ranks for ties.
    fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            let mut out = vec![0.0; v.len()];
            let mut i = 0;
            while i < idx.len() {
                let mut j = i;
                while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                    j += 1;
                }
                let avg = (i + j) as f64 / 2.0 + 1.0;
                for &k in &idx[i..=j] {
                    out[k] = avg;
                }
                i = j + 1;
            }
            out
        }
        let (rx, ry) = (ranks(xs), ranks(ys));
        let n = xs.len() as f64;
        let mean = (n + 1.0) / 2.0;
        let mut num = 0.0;
        let mut dx = 0.0;
        let mut dy = 0.0;
        for (a, b) in rx.iter().zip(&ry) {
            num += (a - mean) * (b - mean);
            dx += (a - mean) * (a - mean);
            dy += (b - mean) * (b - mean);
        }
        num / (dx * dy).sqrt()
    }

    #[test]
    fn probe_error_anticorrelates_with_planted_profile() {
        let mut spec = monotone_spec(6, 128, 4, 16);
        // Noise high enough that shallow layers stay genuinely hard: the
        // curve must be graded, not saturated at zero, for rank order to
        // mean anything.
        spec.noise_scale = 1.0;
        let acts = generate_planted(&spec, &mut RngStream::new(15, 2)).unwrap();
        let curve = probe_curve(&acts, 0.8, 15, &ProbeConfig::default()).unwrap();
        let rho = spearman(&spec.profile, &curve.errors);
        assert!(rho <= -0.8, "spearman {rho}, curve {:?}", curve.errors);
    }
}
