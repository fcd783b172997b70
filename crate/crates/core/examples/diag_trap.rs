use clear_align_core::actstore::{generate_planted, random_direction_pair, Label, PlantSpec};
use clear_align_core::numkit::RngStream;
use clear_align_core::searchtrain::{run_search, step2_objective, TrainConfig};

fn main() {
    let mix: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
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

    // Unfrozen run: whatever state it lands in is the "trap" dictionary.
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let run = run_search(&config, &acts).unwrap();
    println!("selected={} max_prob={:.3} final logits={:?}", run.selected_layer, run.max_prob,
        run.final_logits.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>());

    print!("trap dict l_sae one-hot:");
    let mut lc = vec![0.0; 12];
    for l in 0..12 {
        let mut logits = vec![0.0; 12];
        logits[l] = 50.0;
        let eval = step2_objective(&run.sae, &run.masks, &acts, &pos_rows, &logits,
            &vec![0.0; 12], 1.0, 1e-4, true).unwrap();
        print!(" {:.3}", eval.l_sae);
        lc[l] = eval.l_con;
    }
    println!();
    print!("trap dict l_con one-hot:");
    for l in 0..12 { print!(" {:.3}", lc[l]); }
    println!();

    // Gradient at the uniform point under the trap dict (no noise, tau=1).
    let eval = step2_objective(&run.sae, &run.masks, &acts, &pos_rows, &vec![0.0; 12],
        &vec![0.0; 12], 1.0, 1e-4, true).unwrap();
    print!("d_logits at uniform (x1e3):");
    for g in &eval.d_logits { print!(" {:+.3}", g * 1e3); }
    println!();
    let ev_no = step2_objective(&run.sae, &run.masks, &acts, &pos_rows, &vec![0.0; 12],
        &vec![0.0; 12], 1.0, 1e-4, false).unwrap();
    print!("d_logits sae-only (x1e3):");
    for g in &ev_no.d_logits { print!(" {:+.3}", g * 1e3); }
    println!();
}
