use clear_align_core::actstore::{generate_planted, random_direction_pair, Label, PlantSpec};
use clear_align_core::numkit::RngStream;
use clear_align_core::searchtrain::{run_search, step2_objective, TrainConfig};

fn main() {
    let mix: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let seed = 1u64;
    let mut dir_rng = RngStream::new(seed, 50);
    let (u, v) = random_direction_pair(32, &mut dir_rng);
    let mut profile = vec![0.0; 12];
    profile[9] = 1.0;
    let spec = PlantSpec {
        num_layers: 12, batch: 64, tokens: 4, d_model: 32,
        concept_direction: u, control_direction: v,
        profile, noise_scale: 0.05, entangle_mix: mix,
    };
    let acts = generate_planted(&spec, &mut RngStream::new(seed, 0)).unwrap();
    let pos_rows = acts.rows_with(Label::Positive);

    for anchor in [4usize, 9] {
        let config = TrainConfig { seed, freeze_layer: Some(anchor), ..TrainConfig::default() };
        let run = run_search(&config, &acts).unwrap();
        print!("dict@{anchor}: l_con per one-hot eval:");
        for l in 0..12 {
            let mut logits = vec![0.0; 12];
            logits[l] = 50.0;
            let eval = step2_objective(&run.sae, &run.masks, &acts, &pos_rows, &logits,
                &vec![0.0; 12], 1.0, 1e-4, true).unwrap();
            print!(" {:.3}", eval.l_con);
        }
        println!();
        print!("dict@{anchor}: l_sae per one-hot eval:");
        for l in 0..12 {
            let mut logits = vec![0.0; 12];
            logits[l] = 50.0;
            let eval = step2_objective(&run.sae, &run.masks, &acts, &pos_rows, &logits,
                &vec![0.0; 12], 1.0, 1e-4, true).unwrap();
            print!(" {:.3}", eval.l_sae);
        }
        println!();
    }
}
