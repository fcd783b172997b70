use clear_align_core::actstore::{generate_planted, PlantSpec, random_direction_pair, Label};
use clear_align_core::numkit::RngStream;
use clear_align_core::searchtrain::{brute_force_search, TrainConfig};

fn main() {
    let mut dir_rng = RngStream::new(99, 50);
    let (u, v) = random_direction_pair(10, &mut dir_rng);
    let spec = PlantSpec {
        num_layers: 4, batch: 32, tokens: 2, d_model: 10,
        concept_direction: u, control_direction: v,
        profile: vec![0.0, 0.0, 0.9, 0.0],
        noise_scale: 0.05, entangle_mix: 0.0,
    };
    let acts = generate_planted(&spec, &mut RngStream::new(86, 0)).unwrap();
    let config = TrainConfig { batch_size: 8, t_max: 600, d_sae: 32, seed: 11, ..TrainConfig::default() };
    let result = brute_force_search(&config, &acts).unwrap();
    for s in &result.scores {
        println!("layer {} score {:+.4} drop {:.4} ctrl {:+.4} probe_after {:.3} gamma {:+.4}",
            s.layer, s.erasure_score, s.concept_drop, s.control_change, s.probe_error_after, s.gamma);
    }
    println!("best {} flagged {}", result.best_layer, result.no_clear_optimum);
    let _ = Label::Positive;
}
