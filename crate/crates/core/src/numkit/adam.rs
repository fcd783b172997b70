//! Adam with bias correction, operating on flat `f64` slices so one
//! implementation serves matrices, bias vectors, and logit vectors alike.

use crate::error::{ClearError, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
}

impl AdamState {
    /// Fresh optimizer state for a parameter of `len` entries with defaults
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            lr,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(ClearError::Shape {
                op: "adam_step",
                left: format!("state length {}", self.m.len()),
                right: format!("params {} / grads {}", params.len(), grads.len()),
            });
        }
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With bias correction, m̂ = g and v̂ = g² on step one, so the update
        // is −lr·g/(|g|+ε) ≈ −lr·sign(g).
        let mut state = AdamState::new(3, 0.05);
        let mut params = vec![1.0, -2.0, 0.5];
        let grads = vec![3.0, -0.7, 1e-3];
        state.step(&mut params, &grads).unwrap();
        let expect = [1.0 - 0.05, -2.0 + 0.05, 0.5 - 0.05];
        for (p, e) in params.iter().zip(expect) {
            assert!((p - e).abs() / 0.05 < 1e-4, "{p} vs {e}");
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_changes_nothing_but_the_counter() {
        let mut state = AdamState::new(2, 0.1);
        let mut params = vec![1.5, -0.25];
        state.step(&mut params, &[0.0, 0.0]).unwrap();
        assert_eq!(params, vec![1.5, -0.25]);
        assert_eq!(state.m, vec![0.0, 0.0]);
        assert_eq!(state.v, vec![0.0, 0.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // Reference scalar trace: 100 steps on f(x) = x² from x = 3, lr 0.1.
        let mut state = AdamState::new(1, 0.1);
        let mut x = vec![3.0];
        for _ in 0..100 {
            let g = vec![2.0 * x[0]];
            state.step(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 0.5, "x = {}", x[0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut state = AdamState::new(2, 0.1);
        let mut params = vec![0.0; 3];
        assert!(state.step(&mut params, &[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        /// Permuting coordinates commutes with the update: Adam is
        /// element-wise, and this pins that down.
        #[test]
        fn update_commutes_with_permutation(seed in 0u64..200) {
            use crate::numkit::rng::RngStream;
            let mut rng = RngStream::new(seed, 5);
            let n = 6;
            let params: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let grads: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);

            let mut direct = params.clone();
            AdamState::new(n, 0.02).step(&mut direct, &grads).unwrap();

            let mut permuted: Vec<f64> = perm.iter().map(|&i| params[i]).collect();
            let pgrads: Vec<f64> = perm.iter().map(|&i| grads[i]).collect();
            AdamState::new(n, 0.02).step(&mut permuted, &pgrads).unwrap();

            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(permuted[k].to_bits(), direct[i].to_bits());
            }
        }
    }
}
