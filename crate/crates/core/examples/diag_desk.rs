use std::time::Instant;

use clear_align_core::actstore::{generate_planted, random_direction_pair, Label, PlantSpec};
use clear_align_core::intervene::{calibrate_gamma, erase, erasure_report};
use clear_align_core::numkit::RngStream;
use clear_align_core::probe::ProbeConfig;
use clear_align_core::searchtrain::{run_search, TrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut dir_rng = RngStream::new(seed, 50);
    let (u, v) = random_direction_pair(32, &mut dir_rng);
    let mut profile = vec![0.0; 12];
    profile[9] = 0.9;
    let spec = PlantSpec {
        num_layers: 12, batch: 64, tokens: 4, d_model: 32,
        concept_direction: u, control_direction: v,
        profile, noise_scale: 0.05, entangle_mix: 0.0,
    };
    let acts = generate_planted(&spec, &mut RngStream::new(seed, 0)).unwrap();
    let config = TrainConfig { seed, ..TrainConfig::default() };

    let t0 = Instant::now();
    let run = run_search(&config, &acts).unwrap();
    let search_secs = t0.elapsed().as_secs_f64();
    println!("seed {seed}: selected layer {} (max_prob {:.4}) in {:.1}s", run.selected_layer, run.max_prob, search_secs);

    let l = run.selected_layer;
    let pos_rows = acts.rows_with(Label::Positive);
    let h_pos = acts.layer(l).select_rows(&pos_rows);
    let gamma = calibrate_gamma(&h_pos, &run.sae, &run.masks, &spec.concept_direction).unwrap();
    let erased = erase(acts.layer(l), &run.sae, &run.masks, gamma).unwrap();
    let after = acts.with_layer_replaced(l, erased).unwrap();
    let report = erasure_report(&acts, &after, l, 0.8, seed, &ProbeConfig::default()).unwrap();
    let d = report.directional.as_ref().unwrap();
    println!("  gamma {gamma:+.4}");
    println!("  concept energy {:.5} -> {:.5}  (drop {:.1}%)", d.concept_energy_before, d.concept_energy_after,
        100.0 * (1.0 - d.concept_energy_after / d.concept_energy_before));
    println!("  control energy {:.5} -> {:.5}  (change {:+.2}%)", d.control_energy_before, d.control_energy_after,
        100.0 * (d.control_energy_after / d.control_energy_before - 1.0));
    println!("  target probe {:.3} -> {:.3}   control probe {:.3} -> {:.3}",
        report.probe_target_before, report.probe_target_after, d.probe_control_before, d.probe_control_after);
}
