use clear_align_core::actstore::{generate_planted, random_direction_pair, PlantSpec};
use clear_align_core::numkit::RngStream;
use clear_align_core::searchtrain::brute_force_search;
use clear_align_core::searchtrain::{run_search, TrainConfig};

fn family_spec(family: &str, seed: u64) -> PlantSpec {
    let mut dir_rng = RngStream::new(seed, 50);
    let (u, v) = random_direction_pair(32, &mut dir_rng);
    let profile = match family {
        "onehot" => {
            let mut p = vec![0.0; 12];
            p[9] = 0.9;
            p
        }
        "monotone" => (0..12).map(|i| 0.1 + 0.8 * i as f64 / 11.0).collect(),
        other => panic!("unknown family {other}"),
    };
    PlantSpec {
        num_layers: 12, batch: 64, tokens: 4, d_model: 32,
        concept_direction: u, control_direction: v,
        profile, noise_scale: 0.02, entangle_mix: 1.0,
    }
}

fn main() {
    let family = std::env::args().nth(1).unwrap_or_else(|| "onehot".into());
    let n: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut agree = 0;
    for seed in 0..n {
        let spec = family_spec(&family, seed);
        let acts = generate_planted(&spec, &mut RngStream::new(seed, 0)).unwrap();
        let config = TrainConfig { seed, ..TrainConfig::default() };
        let run = run_search(&config, &acts).unwrap();
        let oracle = brute_force_search(&config, &acts).unwrap();
        let ok = run.selected_layer.abs_diff(oracle.best_layer) <= 1;
        if ok { agree += 1; }
        println!(
            "seed {seed}: search={} brute={} (flat={}) max_prob={:.3} {}",
            run.selected_layer, oracle.best_layer, oracle.no_clear_optimum, run.max_prob,
            if ok { "AGREE" } else { "MISS" }
        );
        if seed == 0 {
            for s in &oracle.scores {
                println!(
                    "  layer {:2}: score {:+.3} energy {:8.3} drop {:.3} ctrl {:+.3} gamma {:.2}",
                    s.layer, s.erasure_score, s.concept_energy, s.concept_drop, s.control_change, s.gamma
                );
            }
        }
    }
    println!("agree {agree}/{n}");
}
