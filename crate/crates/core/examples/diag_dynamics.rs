use clear_align_core::actstore::{generate_planted, random_direction_pair, Label, PlantSpec};
use clear_align_core::numkit::RngStream;
use clear_align_core::searchtrain::{step2_objective, train_step, TrainConfig, TrainState};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut dir_rng = RngStream::new(seed, 50);
    let (u, v) = random_direction_pair(32, &mut dir_rng);
    let mut profile = vec![0.0; 12];
    profile[9] = 0.9;
    let spec = PlantSpec {
        num_layers: 12, batch: 64, tokens: 4, d_model: 32,
        concept_direction: u, control_direction: v,
        profile, noise_scale: 0.05, entangle_mix: 0.5,
    };
    let acts = generate_planted(&spec, &mut RngStream::new(seed, 0)).unwrap();
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let mut state = TrainState::new(&config, &acts).unwrap();
    let pos_rows = acts.rows_with(Label::Positive);

    for t in 0..config.t_max {
        let rec = train_step(&mut state, &acts, t).unwrap();
        if t % 50 == 0 || t == config.t_max - 1 {
            // Split the preference gradient at zero noise: contrastive-only
            // component = (grad with con) − (grad without).
            let logits = state.preference().logits().to_vec();
            let zero = vec![0.0; 12];
            let with_con = step2_objective(state.sae(), state.masks(), &acts, &pos_rows,
                &logits, &zero, rec.tau, config.lambda, true).unwrap();
            let without = step2_objective(state.sae(), state.masks(), &acts, &pos_rows,
                &logits, &zero, rec.tau, config.lambda, false).unwrap();
            let g_con: Vec<f64> = with_con.d_logits.iter().zip(&without.d_logits).map(|(a, b)| a - b).collect();
            let p9 = rec.p[9];
            let pmax = rec.p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let argmax = rec.p.iter().position(|&x| x == pmax).unwrap();
            println!("t={t:3} tau={:.2} l_sae={:.4} l_con={:.4} p9={:.3} pmax={:.3}@{argmax:2} | g_sae[9]={:+.2e} g_con[9]={:+.2e} |g_sae|={:.2e} |g_con|={:.2e} logit9={:+.3}",
                rec.tau, rec.l_sae, rec.l_con, p9, pmax,
                without.d_logits[9], g_con[9],
                without.d_logits.iter().map(|x| x * x).sum::<f64>().sqrt(),
                g_con.iter().map(|x| x * x).sum::<f64>().sqrt(),
                logits[9]);
        }
    }
    let _ = Label::Positive;
}
