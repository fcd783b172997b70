use clear_align_core::actstore::{generate_planted, random_direction_pair, PlantSpec};
use clear_align_core::numkit::RngStream;
use clear_align_core::searchtrain::{run_search, TrainConfig};

fn main() {
    let mix: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let batch: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(16);

    let mut hits = 0;
    let mut near = 0;
    let mut sharp = 0;
    let n_seeds = 10;
    for seed in 0..n_seeds {
        let planted: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(9);
        let mut dir_rng = RngStream::new(seed, 50);
        let (u, v) = random_direction_pair(32, &mut dir_rng);
        let mut profile = vec![0.0; 12];
        profile[planted] = 0.9;
        let spec = PlantSpec {
            num_layers: 12, batch: 64, tokens: 4, d_model: 32,
            concept_direction: u, control_direction: v,
            profile, noise_scale: 0.02, entangle_mix: mix,
        };
        let acts = generate_planted(&spec, &mut RngStream::new(seed, 0)).unwrap();
        let config = TrainConfig { seed, batch_size: batch, ..TrainConfig::default() };
        let run = run_search(&config, &acts).unwrap();
        let l = run.selected_layer;
        if l == planted { hits += 1; }
        if l.abs_diff(planted) <= 1 { near += 1; }
        if run.max_prob >= 0.9 { sharp += 1; }
        println!("seed {seed}: l*={l:2} max_prob={:.3}", run.max_prob);
    }
    println!("exact {hits}/{n_seeds}  within-1 {near}/{n_seeds}  max_prob>=0.9 {sharp}/{n_seeds}");
}
