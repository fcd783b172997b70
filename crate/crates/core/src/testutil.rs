//! Shared fixtures for module tests: small planted datasets with known
//! geometry. Compiled only under `cfg(test)`.

use crate::actstore::{random_direction_pair, PlantSpec};
use crate::numkit::RngStream;

/// Planted spec with a linearly increasing concept profile and directions
/// drawn from a fixed stream, so every module exercises the same geometry.
pub(crate) fn monotone_spec(l: usize, b: usize, t: usize, d: usize) -> PlantSpec {
    let mut rng = RngStream::new(99, 50);
    let (u, v) = random_direction_pair(d, &mut rng);
    PlantSpec {
        num_layers: l,
        batch: b,
        tokens: t,
        d_model: d,
        concept_direction: u,
        control_direction: v,
        profile: (0..l).map(|i| i as f64 / l.max(2) as f64).collect(),
        noise_scale: 0.05,
        entangle_mix: 0.0,
    }
}

/// Same geometry with the caller's concept profile.
pub(crate) fn spec_with_profile(
    b: usize,
    t: usize,
    d: usize,
    profile: Vec<f64>,
) -> PlantSpec {
    let mut spec = monotone_spec(profile.len(), b, t, d);
    spec.profile = profile;
    spec
}
