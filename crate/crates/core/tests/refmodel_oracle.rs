// SPDX-License-Identifier: MIT OR Apache-2.0

// The oracle indexes arrays the way the formulas are written.
#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use typolab_core::refmodel::{RefModel, RefModelConfig};
use typolab_core::tokenizer::TokenSpan;

fn micro() -> RefModel {
    RefModel::new(RefModelConfig {
        n_layers: 1,
        n_heads: 1,
        d_model: 2,
        d_ff: 3,
        vocab_size: 5,
        max_seq_len: 8,
        init_seed: 2024,
    })
    .unwrap()
}

/// Independent step-by-step forward pass for the 1-layer, 1-head, d=2 model.
/// Returns (attention matrix, block output, next-token distribution).
fn oracle(model: &RefModel, ids: &[u32]) -> ([[f64; 3]; 3], [[f64; 2]; 3], Vec<f64>) {
    let b = &model.blocks[0];
    let emb = |id: u32, i: usize| model.embedding[id as usize * 2 + i];
    // With d = 2 the only frequency is 1: pe(pos) = (sin pos, cos pos).
    let mut x = [[0.0; 2]; 3];
    for t in 0..3 {
        x[t][0] = emb(ids[t], 0) + (t as f64).sin();
        x[t][1] = emb(ids[t], 1) + (t as f64).cos();
    }
    let norm = |v: [f64; 2], g: &[f64], bias: &[f64]| {
        let m = (v[0] + v[1]) / 2.0;
        let var = ((v[0] - m).powi(2) + (v[1] - m).powi(2)) / 2.0;
        let s = (var + 1e-5).sqrt();
        [(v[0] - m) / s * g[0] + bias[0], (v[1] - m) / s * g[1] + bias[1]]
    };
    let mul2 = |v: [f64; 2], w: &[f64]| [v[0] * w[0] + v[1] * w[2], v[0] * w[1] + v[1] * w[3]];

    let mut q = [[0.0; 2]; 3];
    let mut k = [[0.0; 2]; 3];
    let mut v = [[0.0; 2]; 3];
    for t in 0..3 {
        let n = norm(x[t], &b.ln1.gain, &b.ln1.bias);
        q[t] = mul2(n, &b.w_q);
        k[t] = mul2(n, &b.w_k);
        v[t] = mul2(n, &b.w_v);
    }
    let scale = 1.0 / 2f64.sqrt();
    let mut attn = [[0.0; 3]; 3];
    for t in 0..3 {
        let mut e = [0.0; 3];
        let mut z = 0.0;
        for s in 0..=t {
            e[s] = ((q[t][0] * k[s][0] + q[t][1] * k[s][1]) * scale).exp();
            z += e[s];
        }
        for s in 0..=t {
            attn[t][s] = e[s] / z;
        }
    }
    let mut out = x;
    for t in 0..3 {
        let mut mixed = [0.0; 2];
        for s in 0..=t {
            mixed[0] += attn[t][s] * v[s][0];
            mixed[1] += attn[t][s] * v[s][1];
        }
        let o = mul2(mixed, &b.w_o);
        out[t][0] += o[0];
        out[t][1] += o[1];
        let n = norm(out[t], &b.ln2.gain, &b.ln2.bias);
        let mut up = [0.0; 3];
        for j in 0..3 {
            let pre = n[0] * b.w_in[j] + n[1] * b.w_in[3 + j];
            up[j] = 0.5 * pre * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (pre + 0.044715 * pre.powi(3))).tanh());
        }
        for i in 0..2 {
            out[t][i] += (0..3).map(|j| up[j] * b.w_out[j * 2 + i]).sum::<f64>();
        }
    }
    let f = norm(out[2], &model.final_norm.gain, &model.final_norm.bias);
    let logits: Vec<f64> = (0..5).map(|id| emb(id, 0) * f[0] + emb(id, 1) * f[1]).collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let dist = logits.iter().map(|l| l.exp() / z).collect();
    (attn, out, dist)
}

#[test]
fn micro_forward_matches_oracle() {
    let model = micro();
    let ids = [4, 0, 2];
    let (attn, out, dist) = oracle(&model, &ids);
    let trace = model.trace(&ids).unwrap();
    for t in 0..3 {
        for s in 0..3 {
            assert!((trace.attention[0][0][t][s] - attn[t][s]).abs() < 1e-5);
        }
        for i in 0..2 {
            assert!((trace.hidden[1][t][i] - out[t][i]).abs() < 1e-5);
        }
    }
    for (a, b) in trace.next_token_dist.iter().zip(&dist) {
        assert!((a - b).abs() < 1e-5);
    }

    let dump = model.forward(&ids, TokenSpan::new(1, 3).unwrap()).unwrap();
    assert!((f64::from(dump.attn_row(0, 0)[0]) - attn[2][1]).abs() < 1e-5);
    assert!((f64::from(dump.attn_row(0, 0)[1]) - attn[2][2]).abs() < 1e-5);
}

fn small(seed: u64) -> RefModel {
    RefModel::new(RefModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 12,
        vocab_size: 30,
        max_seq_len: 64,
        init_seed: seed,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn suffix_changes_leave_prefix_untouched(
        ids in proptest::collection::vec(0u32..30, 2..20),
        cut in 1usize..19,
        replacement in 0u32..30,
        seed in 0u64..4,
    ) {
        let cut = cut % ids.len();
        let mut changed = ids.clone();
        changed[cut] = (changed[cut] + 1 + replacement % 29) % 30;
        let model = small(seed);
        let a = model.trace(&ids).unwrap();
        let b = model.trace(&changed).unwrap();
        for layer in 0..a.hidden.len() {
            for t in 0..cut {
                prop_assert_eq!(&a.hidden[layer][t], &b.hidden[layer][t]);
            }
        }
        for layer in 0..a.attention.len() {
            for head in 0..a.attention[layer].len() {
                for t in 0..cut {
                    prop_assert_eq!(&a.attention[layer][head][t], &b.attention[layer][head][t]);
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one(ids in proptest::collection::vec(0u32..30, 1..40), seed in 0u64..4) {
        let trace = small(seed).trace(&ids).unwrap();
        for layer in &trace.attention {
            for head in layer {
                for row in head {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                }
            }
        }
        let total: f64 = trace.next_token_dist.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-5);
        prop_assert!(trace.next_token_dist.iter().all(|&p| p >= 0.0));
    }
}
