//! Seedable, splittable randomness.
//!
//! Every random choice in the pipeline flows through an [`RngStream`]
//! identified by `(seed, stream_id)`. ChaCha is counter-based, so streams
//! with distinct ids are statistically independent and a stream's output
//! never depends on host, scheduling, or what other streams consumed —
//! which is what lets oracle layers and multi-seed sweeps run in parallel
//! and still produce bit-identical results in any order.
//!
//! Stream-id allotment across the crate (documented here so collisions are
//! auditable): 0–99 data generation, 100–199 search runs, 2000–2999
//! probes (target probes at 2000+layer, control-signal probes offset by
//! 500). Oracle per-layer trainings deliberately replay the search streams
//! — every run constructs its own generators, so parallel layers cannot
//! interfere, and reusing the ids gives each layer an identical noise and
//! batch schedule, which keeps per-layer scores comparable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Uniform draws are clamped into `[2⁻⁵³, 1−2⁻⁵³]` before any log transform
/// so the Gumbel map below can never produce an infinity.
const UNIFORM_LO: f64 = 1.0 / 9007199254740992.0; // 2^-53
const UNIFORM_HI: f64 = 1.0 - 1.0 / 9007199254740992.0;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream with the same seed and a different id; draws from the
    /// child never perturb the parent's sequence.
    pub fn substream(&self, stream_id: u64) -> RngStream {
        RngStream::new(self.seed, stream_id)
    }

    /// Uniform on the open interval, clamped away from both endpoints.
    pub fn uniform_open(&mut self) -> f64 {
        let u: f64 = self.rng.random();
        u.clamp(UNIFORM_LO, UNIFORM_HI)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Fisher–Yates shuffle, consuming one draw per swap.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.rng.random_range(0..=i);
            slice.swap(i, j);
        }
    }
}

/// The Gumbel(0,1) transform of a uniform draw: `−log(−log u)`.
///
/// Strictly increasing in `u`; finite for any `u` in the clamped open
/// interval. Kept separate from the sampling so the transform itself is
/// testable against closed forms.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-(u.ln())).ln()
}

/// `n` independent Gumbel(0,1) draws — the noise term of the softmax layer
/// sampler.
pub fn gumbel_draw(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| gumbel_from_uniform(rng.uniform_open())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_and_stream_are_bit_identical() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..10_000 {
            assert_eq!(a.uniform_open().to_bits(), b.uniform_open().to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let same = (0..100).filter(|_| a.uniform_open() == b.uniform_open()).count();
        assert!(same < 3, "{same} collisions in 100 draws");
    }

    #[test]
    fn gumbel_of_half_matches_closed_form() {
        // −log(−log 0.5) = −log(log 2)
        let want = -(2.0f64.ln().ln());
        assert!((gumbel_from_uniform(0.5) - want).abs() < 1e-15);
        assert!((want - 0.3665).abs() < 1e-4);
    }

    #[test]
    fn gumbel_transform_is_strictly_increasing() {
        let us: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for w in us.windows(2) {
            assert!(gumbel_from_uniform(w[0]) < gumbel_from_uniform(w[1]));
        }
    }

    #[test]
    fn gumbel_transform_finite_at_clamp_boundaries() {
        assert!(gumbel_from_uniform(super::UNIFORM_LO).is_finite());
        assert!(gumbel_from_uniform(super::UNIFORM_HI).is_finite());
    }

    #[test]
    fn gumbel_sample_mean_approaches_euler_mascheroni() {
        let mut rng = RngStream::new(1, 0);
        let n = 1_000_000;
        let mean = gumbel_draw(&mut rng, n).iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5772).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gumbel_empirical_cdf_matches_analytic() {
        // Kolmogorov–Smirnov statistic against F(x) = exp(−exp(−x)).
        let mut rng = RngStream::new(2, 0);
        let n = 100_000;
        let mut xs = gumbel_draw(&mut rng, n);
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = (-(-x).exp()).exp();
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn shuffle_is_deterministic_per_stream() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b = a.clone();
        RngStream::new(9, 3).shuffle(&mut a);
        RngStream::new(9, 3).shuffle(&mut b);
        assert_eq!(a, b);
        let mut c: Vec<u32> = (0..50).collect();
        RngStream::new(9, 4).shuffle(&mut c);
        assert_ne!(a, c);
    }
}
