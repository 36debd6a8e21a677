// SPDX-License-Identifier: MIT OR Apache-2.0

use truthprune::allocation::uniform_profile;
use truthprune::corpus::{gen_synthetic_corpus, SyntheticConfig};
use truthprune::separability::lsd_profile;
use truthprune::toymodel::{prune_model, ToyModel, ToyModelConfig, PRUNABLE};
use truthprune::Matrix;

fn small() -> ToyModelConfig {
    ToyModelConfig {
        num_layers: 3,
        d_model: 32,
        heads: 4,
        ffn_mult: 2,
        vocab: 64,
        seed: 5,
    }
}

// ----------------------------------------------------------------------------
// naive forward pass, f64, one position at a time

fn rms(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + 1e-5).sqrt();
    x.iter().map(|v| v * inv).collect()
}

fn mv(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(x).map(|(&w, v)| w as f64 * v).sum())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Residual stream after every block, for every position.
fn naive_forward(m: &ToyModel, tokens: &[u32]) -> Vec<Vec<Vec<f64>>> {
    let d = m.d_model();
    let heads = m.config.heads as usize;
    let hd = d / heads;
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| m.embedding.row(t as usize).iter().map(|&v| v as f64).collect())
        .collect();
    let mut per_layer = Vec::new();
    for b in &m.blocks {
        let h: Vec<Vec<f64>> = x.iter().map(|r| rms(r)).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| mv(&b.q, r)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| mv(&b.k, r)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| mv(&b.v, r)).collect();
        let mut next = Vec::new();
        for t in 0..tokens.len() {
            let mut ctx = vec![0.0; d];
            for head in 0..heads {
                let r = head * hd..(head + 1) * hd;
                let s: Vec<f64> = (0..=t)
                    .map(|u| {
                        q[t][r.clone()].iter().zip(&k[u][r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
                for u in 0..=t {
                    let p = (s[u] - mx).exp() / z;
                    for c in r.clone() {
                        ctx[c] += p * v[u][c];
                    }
                }
            }
            let x1: Vec<f64> = x[t].iter().zip(mv(&b.o, &ctx)).map(|(a, b)| a + b).collect();
            let hidden: Vec<f64> = mv(&b.up, &rms(&x1)).into_iter().map(gelu).collect();
            next.push(x1.iter().zip(mv(&b.down, &hidden)).map(|(a, b)| a + b).collect());
        }
        x = next;
        per_layer.push(x.clone());
    }
    per_layer
}

#[test]
fn capture_matches_naive_forward() {
    let m = ToyModel::init(&small()).unwrap();
    let tokens = [3u32, 17, 40, 2, 63, 9, 9, 30];
    let got = m.forward_capture(&tokens).unwrap();
    let want = naive_forward(&m, &tokens);
    for (l, layer) in want.iter().enumerate() {
        let last = layer.last().unwrap();
        for (g, w) in got.final_acts[l].iter().zip(last) {
            assert!((*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0), "layer {l}: {g} vs {w}");
        }
    }
    assert_eq!(got.logits.shape(), (tokens.len(), 64));
}

#[test]
fn perplexity_matches_per_token_loop() {
    let m = ToyModel::init(&small()).unwrap();
    let seqs = vec![vec![1u32, 5, 9, 33, 12], vec![60, 2, 2, 7]];
    let mut nll = 0.0f64;
    let mut n = 0usize;
    for s in &seqs {
        for t in 1..s.len() {
            let out = m.forward_capture(&s[..t]).unwrap();
            let row: Vec<f64> = out.logits.row(t - 1).iter().map(|&v| v as f64).collect();
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            nll += lse - row[s[t] as usize];
            n += 1;
        }
    }
    let want = (nll / n as f64).exp();
    let got = m.perplexity(&seqs).unwrap();
    assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
    assert!(got >= 1.0);
}

#[test]
fn uniform_logits_give_vocab_perplexity() {
    let m = ToyModel::init(&small()).unwrap().map_all(|_| 0.0);
    let p = m.perplexity(&[vec![1, 2, 3, 4, 5]]).unwrap();
    assert!((p - 64.0).abs() < 1e-3, "{p}");
}

#[test]
fn init_is_deterministic_and_seeded() {
    let a = ToyModel::init(&small()).unwrap().to_archive().to_bytes().unwrap();
    let b = ToyModel::init(&small()).unwrap().to_archive().to_bytes().unwrap();
    assert_eq!(a, b);
    let c = ToyModel::init(&ToyModelConfig { seed: 6, ..small() }).unwrap();
    assert_ne!(c.to_archive().to_bytes().unwrap(), a);
}

#[test]
fn vocab_errors() {
    let m = ToyModel::init(&small()).unwrap();
    assert!(m.forward_capture(&[64]).is_err());
    assert!(m.forward_capture(&[]).is_err());
}

// ----------------------------------------------------------------------------
// pruning

#[test]
fn zero_profile_leaves_model_unchanged() {
    let m = ToyModel::init(&small()).unwrap();
    let calib = vec![vec![1u32, 2, 3, 4, 5, 6, 7, 8], vec![9, 10, 11, 12]];
    let p = prune_model(&m, &uniform_profile(3, 0.0).unwrap(), &calib).unwrap();
    assert_eq!(p, m);
}

#[test]
fn half_sparsity_zeroes_half_of_every_row() {
    let m = ToyModel::init(&small()).unwrap();
    let calib = vec![vec![1u32, 2, 3, 4, 5, 6, 7, 8], vec![9, 10, 11, 12]];
    let p = prune_model(&m, &uniform_profile(3, 0.5).unwrap(), &calib).unwrap();
    for b in &p.blocks {
        for name in PRUNABLE {
            let w = b.matrix(name).unwrap();
            for r in w.iter_rows() {
                assert_eq!(r.iter().filter(|&&x| x == 0.0).count(), w.cols() / 2, "{name}");
            }
        }
    }
    assert_ne!(p, m);
}

// ----------------------------------------------------------------------------
// planted signal

#[test]
fn wider_gap_is_more_separable_at_every_layer() {
    for seed in 0..5 {
        let mcfg = ToyModelConfig {
            seed,
            ..Default::default()
        };
        let lsd: Vec<Vec<f64>> = [1u32, 2, 4]
            .iter()
            .map(|&gap| {
                let c = gen_synthetic_corpus(
                    &SyntheticConfig {
                        gap,
                        seed,
                        ..Default::default()
                    },
                    mcfg.vocab,
                    mcfg.d_model,
                )
                .unwrap();
                let m = ToyModel::init(&mcfg).unwrap().plant_signal(&c.layout).unwrap();
                lsd_profile(&c.activations(&m).unwrap()).unwrap().lsd
            })
            .collect();
        for l in 0..lsd[0].len() {
            assert!(
                lsd[0][l] < lsd[1][l] && lsd[1][l] < lsd[2][l],
                "seed {seed} layer {l}: {} {} {}",
                lsd[0][l],
                lsd[1][l],
                lsd[2][l]
            );
        }
    }
}

#[test]
fn gap_zero_rejected() {
    let cfg = SyntheticConfig {
        gap: 0,
        ..Default::default()
    };
    assert!(gen_synthetic_corpus(&cfg, 512, 64).is_err());
}
