use clear_align_core::actstore::{generate_planted, random_direction_pair, Label, PlantSpec};
use clear_align_core::intervene::{calibrate_gamma, direction_energy, erase};
use clear_align_core::numkit::RngStream;
use clear_align_core::searchtrain::{run_search, TrainConfig};

fn main() {
    for seed in 0..3u64 {
        let mut dir_rng = RngStream::new(seed, 50);
        let (u, v) = random_direction_pair(32, &mut dir_rng);
        let mut profile = vec![0.0; 12];
        profile[9] = 0.9;
        let spec = PlantSpec {
            num_layers: 12, batch: 64, tokens: 4, d_model: 32,
            concept_direction: u.clone(), control_direction: v.clone(),
            profile, noise_scale: 0.02, entangle_mix: 1.0,
        };
        let acts = generate_planted(&spec, &mut RngStream::new(seed, 0)).unwrap();
        let slab = acts.layer(9);
        let pos_rows = acts.rows_with(Label::Positive);
        let h_pos = slab.select_rows(&pos_rows);
        let e_u0 = direction_energy(&h_pos, &u).unwrap();
        let e_v0 = direction_energy(slab, &v).unwrap();
        for freeze in [false, true] {
            for t_max in [600usize, 2500] {
                let config = TrainConfig {
                    seed,
                    t_max,
                    freeze_layer: if freeze { Some(9) } else { None },
                    ..TrainConfig::default()
                };
                let run = run_search(&config, &acts).unwrap();
                let gamma = calibrate_gamma(&h_pos, &run.sae, &run.masks, &u).unwrap();
                let erased = erase(slab, &run.sae, &run.masks, gamma).unwrap();
                let ep = erased.select_rows(&pos_rows);
                let drop = 1.0 - direction_energy(&ep, &u).unwrap() / e_u0;
                let ctrl = direction_energy(&erased, &v).unwrap() / e_v0 - 1.0;
                println!(
                    "seed {seed} {} t={t_max:4}: gamma {gamma:5.2} drop {:6.1}% ctrl {:+7.1}%{}",
                    if freeze { "freeze" } else { "search" },
                    100.0 * drop,
                    100.0 * ctrl,
                    if !freeze { format!("  (l*={})", run.selected_layer) } else { String::new() }
                );
            }
        }
    }
}
