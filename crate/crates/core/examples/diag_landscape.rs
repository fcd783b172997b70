use clear_align_core::actstore::{generate_planted, random_direction_pair, Label, PlantSpec};
use clear_align_core::numkit::RngStream;
use clear_align_core::conceptsig::NegativePooling;
use clear_align_core::searchtrain::{run_search, step2_objective, TrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mix: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let mut dir_rng = RngStream::new(seed, 50);
    let (u, v) = random_direction_pair(32, &mut dir_rng);
    let mut profile = vec![0.0; 12];
    profile[9] = 0.9;
    let spec = PlantSpec {
        num_layers: 12, batch: 64, tokens: 4, d_model: 32,
        concept_direction: u, control_direction: v,
        profile, noise_scale: 0.05, entangle_mix: mix,
    };
    let acts = generate_planted(&spec, &mut RngStream::new(seed, 0)).unwrap();
    let pos_rows = acts.rows_with(Label::Positive);

    println!("== per-layer frozen trainings (each dictionary on its own layer) ==");
    let mut best_dict = None;
    for l in 0..12 {
        let pooling = if std::env::args().nth(3).as_deref() == Some("max") { NegativePooling::Max } else { NegativePooling::Mean };
        let config = TrainConfig { seed, freeze_layer: Some(l), negative_pooling: pooling, ..TrainConfig::default() };
        let run = run_search(&config, &acts).unwrap();
        let w = 60;
        let tail = &run.trace[600 - w..];
        let l_con: f64 = tail.iter().map(|r| r.l_con).sum::<f64>() / w as f64;
        let l_sae: f64 = tail.iter().map(|r| r.l_sae).sum::<f64>() / w as f64;
        println!("layer {l:2}: l_sae {l_sae:.4}  l_con {l_con:.4}");
        if l == 9 { best_dict = Some(run); }
    }

    println!("== shared dictionary (trained frozen at 9), L_con at one-hot evaluation per layer ==");
    let run = best_dict.unwrap();
    for l in 0..12 {
        let mut logits = vec![0.0; 12];
        logits[l] = 50.0;
        let eval = step2_objective(&run.sae, &run.masks, &acts, &pos_rows, &logits,
            &vec![0.0; 12], 1.0, 1e-4, true).unwrap();
        println!("one-hot {l:2}: l_sae {:.4}  l_con {:.4}", eval.l_sae, eval.l_con);
    }
}
