use clear_align_core::actstore::{generate_planted, random_direction_pair, Label, PlantSpec};
use clear_align_core::intervene::{calibrate_gamma, direction_energy, erase};
use clear_align_core::numkit::{dot, Matrix, RngStream};
use clear_align_core::searchtrain::{run_search, TrainConfig};

/// Regression coefficient of the erase subtraction onto a direction:
/// fraction of the direction's content that the subtraction removes.
fn removal_fraction(h: &Matrix, s: &Matrix, dir: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..h.rows() {
        let hc = dot(h.row(i), dir);
        let sc = dot(s.row(i), dir);
        num += sc * hc;
        den += hc * hc;
    }
    num / den.max(1e-12)
}

fn main() {
    let seed = 0u64;
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
    let lambda: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let t_max: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(600);
    let freeze = std::env::args().nth(3).map(|s| s == "freeze").unwrap_or(false);
    let max_pool = std::env::args().nth(4).map(|s| s == "max").unwrap_or(false);
    let d_sae: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(256);
    let config = TrainConfig {
        seed, lambda, t_max, d_sae,
        freeze_layer: if freeze { Some(9) } else { None },
        negative_pooling: if max_pool {
            clear_align_core::conceptsig::NegativePooling::Max
        } else {
            clear_align_core::conceptsig::NegativePooling::Mean
        },
        ..TrainConfig::default()
    };
    let run = run_search(&config, &acts).unwrap();

    let slab = acts.layer(9);
    let pos_rows = acts.rows_with(Label::Positive);
    let neg_rows = acts.rows_with(Label::Negative);
    let h_pos = slab.select_rows(&pos_rows);
    let h_neg = slab.select_rows(&neg_rows);
    let gamma = calibrate_gamma(&h_pos, &run.sae, &run.masks, &u).unwrap();
    println!("gamma = {gamma:.4}  (selected layer {})", run.selected_layer);

    let w_dec = run.sae.w_dec();
    let (d_model, d_sae) = w_dec.shape();
    let m_spec = run.masks.m_spec();

    // Subtraction s = γ·W_dec(f ⊙ m_spec), measured separately on each class.
    let sub = |h: &Matrix| -> Matrix {
        let f = run.sae.encode(h).unwrap();
        let mut fm = f.values().clone();
        for i in 0..fm.rows() {
            for (x, &m) in fm.row_mut(i).iter_mut().zip(m_spec) {
                *x *= m * gamma;
            }
        }
        fm.matmul_nt(w_dec).unwrap()
    };
    let s_pos = sub(&h_pos);
    let s_neg = sub(&h_neg);
    println!(
        "rho_u pos {:.3} | rho_v pos {:.3} neg {:.3}",
        removal_fraction(&h_pos, &s_pos, &u),
        removal_fraction(&h_pos, &s_pos, &v),
        removal_fraction(&h_neg, &s_neg, &v),
    );

    // Per-feature contribution to rho_v on positives.
    let f_pos = run.sae.encode(&h_pos).unwrap();
    let l0: f64 = (0..f_pos.rows())
        .map(|i| f_pos.values().row(i).iter().filter(|&&x| x > 1e-6).count() as f64)
        .sum::<f64>() / f_pos.rows() as f64;
    println!("L0 (active features per positive row): {l0:.1} of {d_sae}");
    let hv: Vec<f64> = (0..h_pos.rows()).map(|i| dot(h_pos.row(i), &v)).collect();
    let den: f64 = hv.iter().map(|c| c * c).sum();
    let mut contrib: Vec<(usize, f64, f64, f64, f64)> = (0..d_sae)
        .map(|j| {
            let col: Vec<f64> = (0..d_model).map(|i| w_dec.row(i)[j]).collect();
            let dv = dot(&col, &v);
            let du = dot(&col, &u);
            let cross: f64 = (0..h_pos.rows())
                .map(|i| f_pos.values().row(i)[j] * hv[i])
                .sum();
            (j, gamma * m_spec[j] * dv * cross / den, du, dv, m_spec[j])
        })
        .collect();
    contrib.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
    println!("top rho_v contributors:  j   rho_v_j    u·d    v·d  m_spec");
    for r in contrib.iter().take(10) {
        println!("  {:3}  {:+.4} {:+.3} {:+.3} {:.3}", r.0, r.1, r.2, r.3, r.4);
    }
    let tail: f64 = contrib.iter().skip(10).map(|r| r.1).sum();
    println!("  remaining {} features sum {:+.4}", d_sae - 10, tail);

    // The f_neg race: who sets the mask normalizer, and where do the
    // v-carrying features land relative to it.
    let f_neg = run.sae.encode(&h_neg).unwrap();
    let pooled: Vec<f64> = (0..d_sae)
        .map(|j| {
            (0..f_neg.rows()).map(|i| f_neg.values().row(i)[j]).sum::<f64>()
                / f_neg.rows() as f64
        })
        .collect();
    let col = |j: usize| -> Vec<f64> { (0..d_model).map(|i| w_dec.row(i)[j]).collect() };
    let mut by_pool: Vec<usize> = (0..d_sae).collect();
    by_pool.sort_by(|&a, &b| pooled[b].partial_cmp(&pooled[a]).unwrap());
    println!("top f_neg features:   j  f_neg    u·d    v·d  m_spec");
    for &j in by_pool.iter().take(8) {
        let c = col(j);
        println!(
            "  {:3}  {:.3} {:+.3} {:+.3} {:.3}",
            j, pooled[j], dot(&c, &u), dot(&c, &v), m_spec[j]
        );
    }
    let mut by_v: Vec<usize> = (0..d_sae).collect();
    by_v.sort_by(|&a, &b| {
        dot(&col(b), &v).abs().partial_cmp(&dot(&col(a), &v).abs()).unwrap()
    });
    println!("top |v·d| features:   j  f_neg    u·d    v·d  m_spec");
    for &j in by_v.iter().take(6) {
        let c = col(j);
        println!(
            "  {:3}  {:.3} {:+.3} {:+.3} {:.3}",
            j, pooled[j], dot(&c, &u), dot(&c, &v), m_spec[j]
        );
    }

    let erased = erase(slab, &run.sae, &run.masks, gamma).unwrap();
    let ep = erased.select_rows(&pos_rows);
    println!(
        "concept energy {:.3} -> {:.3}; control {:.3} -> {:.3}",
        direction_energy(&h_pos, &u).unwrap(),
        direction_energy(&ep, &u).unwrap(),
        direction_energy(slab, &v).unwrap(),
        direction_energy(&erased, &v).unwrap()
    );
}
