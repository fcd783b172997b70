//! Sparse autoencoder: `f = ReLU(W_enc·h + b_enc)`, `ĥ = W_dec·f`, trained
//! against squared reconstruction error plus an ℓ₁ penalty on `f`.
//!
//! Conventions that matter:
//!
//! - No decoder bias. The erasure operator downstream subtracts
//!   `W_dec·(f ⊙ mask)` from raw activations, and a decoder bias would leak
//!   into every such subtraction.
//! - ReLU and ℓ₁ subgradients at exactly 0 are 0, so features that never
//!   fire stay dead deterministically.
//! - Decoder columns are capped at norm 10 (renormalized after each
//!   optimizer step by the trainer); otherwise the ℓ₁ penalty can be gamed
//!   by shrinking `f` and inflating `W_dec` without bound.
//! - `W_enc` is stored feature-major (`d_sae × d_model`) and `W_dec`
//!   channel-major (`d_model × d_sae`), so encode and decode are both
//!   row-dot-row products with no transposes materialized.
//!
//! [`SparseAutoencoder::backward`] propagates *caller-supplied* upstream
//! gradients (`∂L/∂ĥ`, `∂L/∂f`) down to parameters and input; the trainer
//! composes reconstruction, sparsity, and contrastive terms into a single
//! backward pass that stays in lockstep with [`sae_grads`]'s closed forms.

pub mod checkpoint;

use crate::error::{ClearError, Result};
use crate::numkit::{Matrix, RngStream};

/// Norm every live decoder column is held at between optimizer steps.
///
/// Fixing the column norms makes the ℓ₁ penalty meaningful: with free
/// norms the optimizer can shrink feature activations while inflating the
/// corresponding columns (or sag the columns and lean on an inflated
/// subtraction coefficient downstream), paying no reconstruction cost and
/// defeating the sparsity pressure. Columns that are exactly zero — dead
/// features — are left alone rather than being scaled up from nothing.
pub const DECODER_COLUMN_NORM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseAutoencoder {
    w_enc: Matrix,
    b_enc: Vec<f64>,
    w_dec: Matrix,
    d_model: usize,
    d_sae: usize,
}

/// Non-negative feature activations, one row per input row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    values: Matrix,
}

impl SparseFeatures {
    /// Wraps a non-negative matrix; rejects negative entries.
    pub fn new(values: Matrix) -> Result<Self> {
        if values.data().iter().any(|&v| v < 0.0) {
            return Err(ClearError::Config(
                "sparse features must be non-negative".into(),
            ));
        }
        Ok(SparseFeatures { values })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }
}

/// Loss breakdown; `total = reconstruction + λ·sparsity` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaeLossReport {
    pub reconstruction: f64,
    pub sparsity: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Cached forward pass: pre-activations are kept because the backward pass
/// needs the ReLU firing pattern.
#[derive(Debug, Clone)]
pub struct SaeForward {
    pub pre_activation: Matrix,
    pub features: SparseFeatures,
    pub reconstruction: Matrix,
}

/// Parameter and input gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct SaeBackward {
    pub d_w_enc: Matrix,
    pub d_b_enc: Vec<f64>,
    pub d_w_dec: Matrix,
    /// Gradient through the *encoder path only*; callers that also use the
    /// input as reconstruction target must add that term themselves.
    pub d_input_enc: Matrix,
}

impl SparseAutoencoder {
    /// Builds from explicit weights, validating the overcompleteness
    /// invariant `d_sae ≥ d_model` and shape agreement.
    pub fn new(w_enc: Matrix, b_enc: Vec<f64>, w_dec: Matrix) -> Result<Self> {
        let (d_sae, d_model) = w_enc.shape();
        if d_sae < d_model {
            return Err(ClearError::Config(format!(
                "feature space must be at least as wide as the input: d_sae {d_sae} < d_model {d_model}"
            )));
        }
        if b_enc.len() != d_sae {
            return Err(ClearError::Shape {
                op: "SparseAutoencoder::new",
                left: format!("W_enc {d_sae}x{d_model}"),
                right: format!("b_enc length {}", b_enc.len()),
            });
        }
        if w_dec.shape() != (d_model, d_sae) {
            return Err(ClearError::Shape {
                op: "SparseAutoencoder::new",
                left: format!("expected W_dec {d_model}x{d_sae}"),
                right: format!("{}x{}", w_dec.rows(), w_dec.cols()),
            });
        }
        if !w_enc.is_finite() || !w_dec.is_finite() || b_enc.iter().any(|v| !v.is_finite()) {
            return Err(ClearError::Config("weights must be finite".into()));
        }
        Ok(SparseAutoencoder {
            w_enc,
            b_enc,
            w_dec,
            d_model,
            d_sae,
        })
    }

    /// Random initialization: encoder entries `N(0, 1/d_model)` attenuated
    /// by `d_model/d_sae`, decoder the tied transpose rescaled to exactly
    /// unit-norm columns, zero bias.
    ///
    /// The attenuation keeps the initial reconstruction gain below one.
    /// That matters when a depth selector trains jointly with the
    /// dictionary: an over-reconstructing start makes the early
    /// reconstruction gradient repel the selector from exactly the
    /// high-energy layers it should examine, while an under-reconstructing
    /// start leaves the contrastive signal in charge until the dictionary
    /// has grown into whatever mixture the selector committed to. Placing
    /// the attenuation on the encoder (rather than the decoder) lets the
    /// decoder satisfy the unit-column-norm constraint from step zero.
    pub fn init(d_model: usize, d_sae: usize, rng: &mut RngStream) -> Result<Self> {
        let sd = (1.0 / d_model as f64).sqrt();
        let raw = Matrix::from_fn(d_sae, d_model, |_, _| sd * rng.standard_normal());
        let mut w_dec = raw.transpose();
        for j in 0..d_sae {
            let mut sq = 0.0;
            for i in 0..d_model {
                sq += w_dec.get(i, j).powi(2);
            }
            let norm = sq.sqrt();
            if norm > 0.0 {
                for i in 0..d_model {
                    w_dec.set(i, j, w_dec.get(i, j) / norm);
                }
            }
        }
        let mut w_enc = raw;
        w_enc.scale(d_model as f64 / d_sae as f64);
        SparseAutoencoder::new(w_enc, vec![0.0; d_sae], w_dec)
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn d_sae(&self) -> usize {
        self.d_sae
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[f64] {
        &self.b_enc
    }

    pub fn w_dec(&self) -> &Matrix {
        &self.w_dec
    }

    /// Mutable parameter views for the optimizer: (W_enc, b_enc, W_dec).
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (
            self.w_enc.data_mut(),
            &mut self.b_enc,
            self.w_dec.data_mut(),
        )
    }

    /// `f = ReLU(W_enc·h + b_enc)`, row-wise.
    pub fn encode(&self, h: &Matrix) -> Result<SparseFeatures> {
        Ok(self.forward_parts(h)?.1)
    }

    /// `ĥ = W_dec·f`, row-wise; no bias.
    pub fn decode(&self, f: &SparseFeatures) -> Result<Matrix> {
        if f.width() != self.d_sae {
            return Err(ClearError::Shape {
                op: "decode",
                left: format!("features width {}", f.width()),
                right: format!("d_sae {}", self.d_sae),
            });
        }
        f.values.matmul_nt(&self.w_dec)
    }

    fn forward_parts(&self, h: &Matrix) -> Result<(Matrix, SparseFeatures)> {
        if h.cols() != self.d_model {
            return Err(ClearError::Shape {
                op: "encode",
                left: format!("input width {}", h.cols()),
                right: format!("d_model {}", self.d_model),
            });
        }
        let mut z = h.matmul_nt(&self.w_enc)?;
        for r in 0..z.rows() {
            for (v, &b) in z.row_mut(r).iter_mut().zip(&self.b_enc) {
                *v += b;
            }
        }
        let f = Matrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j).max(0.0));
        Ok((z, SparseFeatures { values: f }))
    }

    /// Full forward pass with everything the backward pass needs cached.
    pub fn forward(&self, h: &Matrix) -> Result<SaeForward> {
        let (z, f) = self.forward_parts(h)?;
        let h_hat = self.decode(&f)?;
        Ok(SaeForward {
            pre_activation: z,
            features: f,
            reconstruction: h_hat,
        })
    }

    /// Propagates upstream gradients `∂L/∂ĥ` and `∂L/∂f` to parameters and
    /// the encoder input. Any differentiable loss over `(ĥ, f)` can be
    /// driven through this single pass.
    pub fn backward(
        &self,
        input: &Matrix,
        fwd: &SaeForward,
        d_h_hat: &Matrix,
        d_f: &Matrix,
    ) -> Result<SaeBackward> {
        let n = input.rows();
        if d_h_hat.shape() != (n, self.d_model) || d_f.shape() != (n, self.d_sae) {
            return Err(ClearError::Shape {
                op: "sae backward",
                left: format!("d_h_hat {:?}", d_h_hat.shape()),
                right: format!("d_f {:?}", d_f.shape()),
            });
        }
        // ∂L/∂f gets the decode contribution; then the ReLU gate (zero at
        // exactly zero) turns it into ∂L/∂z.
        let mut d_f_total = d_h_hat.matmul(&self.w_dec)?;
        d_f_total.add_scaled(d_f, 1.0)?;
        let z = &fwd.pre_activation;
        let mut d_z = d_f_total;
        for i in 0..n {
            let zr = z.row(i);
            for (j, v) in d_z.row_mut(i).iter_mut().enumerate() {
                if zr[j] <= 0.0 {
                    *v = 0.0;
                }
            }
        }

        let d_w_enc = d_z.matmul_tn(input)?;
        let mut d_b_enc = vec![0.0; self.d_sae];
        for i in 0..n {
            for (b, &v) in d_b_enc.iter_mut().zip(d_z.row(i)) {
                *b += v;
            }
        }
        let d_w_dec = d_h_hat.matmul_tn(fwd.features.values())?;
        let d_input_enc = d_z.matmul(&self.w_enc)?;
        Ok(SaeBackward {
            d_w_enc,
            d_b_enc,
            d_w_dec,
            d_input_enc,
        })
    }

    /// Rescales every nonzero decoder column back to [`DECODER_COLUMN_NORM`].
    /// Call after each optimizer step; see the constant for why the norms
    /// are pinned rather than merely capped.
    pub fn normalize_decoder_columns(&mut self) {
        for j in 0..self.d_sae {
            let mut sq = 0.0;
            for i in 0..self.d_model {
                let v = self.w_dec.get(i, j);
                sq += v * v;
            }
            let norm = sq.sqrt();
            if norm > 0.0 {
                let s = DECODER_COLUMN_NORM / norm;
                for i in 0..self.d_model {
                    self.w_dec.set(i, j, self.w_dec.get(i, j) * s);
                }
            }
        }
    }
}

/// Loss of a forward pass against an explicit target: mean squared row
/// residual plus λ times mean row ℓ₁ mass of the features.
pub fn sae_loss(
    h_target: &Matrix,
    f: &SparseFeatures,
    h_hat: &Matrix,
    lambda: f64,
) -> Result<SaeLossReport> {
    if h_target.shape() != h_hat.shape() || h_target.rows() != f.rows() {
        return Err(ClearError::Shape {
            op: "sae_loss",
            left: format!("target {:?}", h_target.shape()),
            right: format!("h_hat {:?} / f rows {}", h_hat.shape(), f.rows()),
        });
    }
    if lambda < 0.0 {
        return Err(ClearError::Config(format!(
            "sparsity weight must be non-negative, got {lambda}"
        )));
    }
    let n = h_target.rows() as f64;
    let mut rec = 0.0;
    for (a, b) in h_target.data().iter().zip(h_hat.data()) {
        let d = a - b;
        rec += d * d;
    }
    rec /= n;
    // Features are non-negative, so the ℓ₁ norm is a plain sum.
    let sparsity = f.values().data().iter().sum::<f64>() / n;
    Ok(SaeLossReport {
        reconstruction: rec,
        sparsity,
        lambda,
        total: rec + lambda * sparsity,
    })
}

/// Closed-form gradients of [`sae_loss`] with the input as its own target
/// (the autoencoding objective): returns parameter gradients plus the total
/// input gradient (encoder path minus the target-side residual term).
pub fn sae_grads(
    sae: &SparseAutoencoder,
    h_target: &Matrix,
    lambda: f64,
) -> Result<(SaeBackward, SaeLossReport)> {
    let fwd = sae.forward(h_target)?;
    let report = sae_loss(h_target, &fwd.features, &fwd.reconstruction, lambda)?;
    let n = h_target.rows() as f64;

    // ∂/∂ĥ of mean ||ĥ − h||² = (2/n)(ĥ − h).
    let mut d_h_hat = fwd.reconstruction.clone();
    d_h_hat.add_scaled(h_target, -1.0)?;
    d_h_hat.scale(2.0 / n);

    // ∂/∂f of λ·mean ||f||₁ = λ/n on firing features, 0 at exactly 0.
    let z = &fwd.pre_activation;
    let d_f = Matrix::from_fn(z.rows(), z.cols(), |i, j| {
        if z.get(i, j) > 0.0 {
            lambda / n
        } else {
            0.0
        }
    });

    let mut back = sae.backward(h_target, &fwd, &d_h_hat, &d_f)?;
    // Input is also the target: add −(2/n)(ĥ − h) to the encoder-path term.
    back.d_input_enc.add_scaled(&d_h_hat, -1.0)?;
    Ok((back, report))
}
