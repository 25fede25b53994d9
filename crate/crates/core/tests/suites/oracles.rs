//! Test bodies shared by the `oracles` target and the acceptance suite.

use std::collections::HashSet;

use crate::common::*;
use nflat_core::attention::{attention_scores, RelPosPair};
use nflat_core::autodiff::Tape;
use nflat_core::context::{SelfAttention, SelfAttnConfig};
use nflat_core::crf::{log_partition, nll_with_grads, path_score, viterbi, CrfWeights};
use nflat_core::flat::{build_flat_lattice, FlatEncoder};
use nflat_core::infer::{interformer_forward, nflat_emissions, self_attention_forward, AttnMeter};
use nflat_core::interformer::{InterFormer, InterFormerConfig};
use nflat_core::lexicon::{append_non_word, build_trie, match_words};
use nflat_core::params::ParamStore;
use nflat_core::config::Ablation;
use nflat_core::tensor::Tensor;
use rand::Rng;

fn weights<'a>(l: usize, tr: &'a [f64], st: &'a [f64], en: &'a [f64]) -> CrfWeights<'a> {
    CrfWeights {
        labels: l,
        trans: tr,
        start: st,
        end: en,
    }
}

pub fn crf_partition_and_viterbi_match_enumeration() {
    let mut r = rng(1);
    for n in 1..=5 {
        for l in 1..=4 {
            for _ in 0..5 {
                let (em, tr, st, en) = crf_instance(&mut r, n, l);
                let w = weights(l, &tr, &st, &en);
                assert!((log_partition(&em, w) - brute_log_partition(&em, w)).abs() < 1e-8);
                let (path, score) = viterbi(&em, w);
                let best = brute_best_score(&em, w);
                assert!((score - best).abs() < 1e-8);
                assert!((path_score(&em, w, &path) - best).abs() < 1e-8);
            }
        }
    }
}

pub fn crf_path_probabilities_sum_to_one() {
    let mut r = rng(2);
    for _ in 0..20 {
        let (n, l) = (r.random_range(1..=4), r.random_range(1..=4));
        let (em, tr, st, en) = crf_instance(&mut r, n, l);
        let w = weights(l, &tr, &st, &en);
        let z = log_partition(&em, w);
        let total: f64 = all_paths(n, l).iter().map(|p| (path_score(&em, w, p) - z).exp()).sum();
        assert!((total - 1.0).abs() < 1e-8);
    }
}

pub fn viterbi_beats_random_paths_and_ignores_column_shift() {
    let mut r = rng(3);
    for _ in 0..20 {
        let (n, l) = (r.random_range(1..=12), r.random_range(2..=5));
        let (em, tr, st, en) = crf_instance(&mut r, n, l);
        let w = weights(l, &tr, &st, &en);
        let (path, score) = viterbi(&em, w);
        for _ in 0..100 {
            let p: Vec<usize> = (0..n).map(|_| r.random_range(0..l)).collect();
            assert!(score >= path_score(&em, w, &p) - 1e-12);
        }
        let c = r.random_range(-5.0..5.0);
        let shifted: Vec<f64> = em.iter().map(|e| e + c).collect();
        assert_eq!(viterbi(&shifted, w).0, path);
    }
}

pub fn raising_gold_emissions_lowers_nll() {
    let mut r = rng(4);
    for _ in 0..20 {
        let (n, l) = (r.random_range(1..=6), r.random_range(2..=4));
        let (mut em, tr, st, en) = crf_instance(&mut r, n, l);
        let w = weights(l, &tr, &st, &en);
        let gold: Vec<usize> = (0..n).map(|_| r.random_range(0..l)).collect();
        let mut prev = nll_with_grads(&em, w, &gold).unwrap().0;
        for _ in 0..5 {
            for (t, &y) in gold.iter().enumerate() {
                em[t * l + y] += 0.5;
            }
            let next = nll_with_grads(&em, w, &gold).unwrap().0;
            assert!(next < prev);
            prev = next;
        }
    }
}

pub fn match_words_equals_substring_enumeration() {
    let mut r = rng(5);
    let alphabet: Vec<char> = "abcde".chars().collect();
    for _ in 0..1000 {
        let words: Vec<String> = (0..r.random_range(0..30))
            .map(|_| (0..r.random_range(1..=5)).map(|_| alphabet[r.random_range(0..5)]).collect())
            .collect();
        let chars: Vec<char> = (0..r.random_range(1..=50)).map(|_| alphabet[r.random_range(0..5)]).collect();
        let trie = build_trie(&words).unwrap();
        let set: HashSet<String> = words.into_iter().collect();
        let got: Vec<(String, usize, usize)> = match_words(&trie, &chars, 10)
            .into_iter()
            .map(|w| (w.surface, w.head, w.tail))
            .collect();
        assert_eq!(got, brute_match(&set, &chars, 10));
    }
}

pub fn trie_membership_agrees_with_hash_set() {
    let mut r = rng(6);
    let words: Vec<String> = (0..10_000)
        .map(|_| (0..r.random_range(1..=6)).map(|_| char::from(b'a' + r.random_range(0..8u8))).collect())
        .collect();
    let trie = build_trie(&words).unwrap();
    let set: HashSet<&String> = words.iter().collect();
    assert_eq!(trie.word_count(), set.len());
    for _ in 0..10_000 {
        let probe: String = (0..r.random_range(1..=6)).map(|_| char::from(b'a' + r.random_range(0..8u8))).collect();
        assert_eq!(trie.contains(&probe), set.contains(&probe));
    }
}

fn inter_layer(d: usize, heads: usize, rel: bool, seed: u64) -> (InterFormer, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let cfg = InterFormerConfig {
        d_model: d,
        heads,
        d_ff: 2 * d,
        attn_dropout: 0.0,
        fc_dropout: 0.0,
        relative_positions: rel,
        empty_row_fallback: false,
    };
    let layer = InterFormer::new(&mut store, "inter", cfg, &mut rng(seed)).unwrap();
    (layer, store)
}

/// Random spans inside a sentence of `n` characters, the last covering it.
fn random_spans(r: &mut nflat_core::nn::ModelRng, n: usize, m: usize) -> Vec<(usize, usize)> {
    let mut spans: Vec<(usize, usize)> = (0..m - 1)
        .map(|_| {
            let h = r.random_range(1..=n);
            (h, r.random_range(h..=n))
        })
        .collect();
    spans.push((1, n));
    spans
}

pub fn inter_scores_match_scalar_loops() {
    let (layer, store) = inter_layer(8, 2, true, 7);
    let mut r = rng(8);
    let (n, m, h, hd) = (2, 2, 2, 4);
    let x = rand_mat(&mut r, n, 8);
    let w = rand_mat(&mut r, m, 8);
    let spans = vec![(1, 2), (1, 2)];
    let reference = inter_scores(&layer, &store, &x, &w, &spans);
    let q: Vec<f64> = x.iter().flat_map(|row| vec_mat(row, store.get(layer.w_q))).collect();
    // keys regrouped head-major: [1, 1, h, M, hd]
    let kw: Mat = w.iter().map(|row| vec_mat(row, store.get(layer.w_k))).collect();
    let k: Vec<f64> = (0..h).flat_map(|s| kw.iter().flat_map(move |row| row[s * hd..(s + 1) * hd].to_vec())).collect();
    // relative rows: [1, N, h, M, hd]
    let mut rel = Vec::new();
    for i in 0..n {
        for s in 0..h {
            for span in &spans {
                rel.extend_from_slice(&inter_rel(&layer, &store, i + 1, *span)[s * hd..(s + 1) * hd]);
            }
        }
    }
    for (i, span) in spans.iter().enumerate() {
        let direct = layer.rel_pos_encoding(&store, RelPosPair::between(i + 1, &words_for(&[*span], false)[0])).unwrap();
        assert!(max_abs_diff(&direct, &inter_rel(&layer, &store, i + 1, *span)) < 1e-12);
    }
    let mut tape = Tape::new(&store);
    let qv = tape.input(Tensor::new(vec![1, n, h, 1, hd], q).unwrap());
    let kv = tape.input(Tensor::new(vec![1, 1, h, m, hd], k).unwrap());
    let rv = tape.input(Tensor::new(vec![1, n, h, m, hd], rel).unwrap());
    let (u, v) = (tape.param(layer.u), tape.param(layer.v));
    let scores = attention_scores(&mut tape, qv, kv, Some(rv), u, v).unwrap();
    assert_eq!(tape.attention_cells(), (h * n * m) as u64);
    let got = tape.value(scores);
    for s in 0..h {
        for i in 0..n {
            for j in 0..m {
                let a = got.at(&[0, i, s, 0, j]);
                assert!((a - reference[s][i][j]).abs() < 1e-12, "{a} vs {}", reference[s][i][j]);
            }
        }
    }
}

pub fn scores_degenerate_to_simpler_forms() {
    let (layer, mut store) = inter_layer(4, 1, true, 20);
    let mut r = rng(21);
    let w = rand_mat(&mut r, 3, 4);
    for id in [layer.w_r_head, layer.w_r_tail, layer.w_q] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    // zero queries and zero relative term: every character scores u·K_j
    let x = rand_mat(&mut r, 2, 4);
    let scores = inter_scores(&layer, &store, &x, &w, &[(1, 1), (1, 2), (2, 2)]);
    let u = store.get(layer.u).data();
    for j in 0..3 {
        let expect: f64 = vec_mat(&w[j], store.get(layer.w_k)).iter().zip(u).map(|(a, b)| a * b).sum();
        assert!((scores[0][0][j] - expect).abs() < 1e-12);
        assert!((scores[0][1][j] - expect).abs() < 1e-12);
    }
    assert!(layer
        .rel_pos_encoding(&store, RelPosPair { head_offset: 3, tail_offset: -2 })
        .unwrap()
        .iter()
        .all(|&v| v == 0.0));
}

pub fn interformer_matches_scalar_loops() {
    let mut r = rng(9);
    for seed in 0..20 {
        let rel = seed % 4 != 3;
        let (layer, store) = inter_layer(8, 2, rel, seed);
        let n = r.random_range(1..=4);
        let m = r.random_range(1..=4);
        let x = rand_mat(&mut r, n, 8);
        let w = rand_mat(&mut r, m, 8);
        let spans = random_spans(&mut r, n, m);
        let reference = flatten(&interformer(&layer, &store, &x, &w, &spans));
        let (_, tape_out) = tape_interformer(&layer, &store, &[(x.clone(), w.clone(), spans.clone())], 0.0);
        assert!(max_abs_diff(&tape_out, &reference) < 1e-10);
        let fast = interformer_forward(
            &layer,
            &store,
            &Tensor::new(vec![n, 8], flatten(&x)).unwrap(),
            &Tensor::new(vec![m, 8], flatten(&w)).unwrap(),
            &spans,
            &mut AttnMeter::new(),
        )
        .unwrap();
        assert!(max_abs_diff(fast.data(), &reference) < 1e-10);
    }
}

pub fn zeroed_positional_parameters_reduce_to_content_attention() {
    let (layer, mut store) = inter_layer(4, 1, true, 10);
    for id in [layer.w_r_head, layer.w_r_tail, layer.u, layer.v] {
        store.get_mut(id).data_mut().fill(0.0);
    }
    // orthonormal characters and words
    let eye: Mat = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let x = eye[..3].to_vec();
    let w = eye[1..].to_vec();
    let spans = vec![(1, 2), (2, 3), (1, 3)];
    let scores = inter_scores(&layer, &store, &x, &w, &spans);
    let (wq, wk) = (store.get(layer.w_q), store.get(layer.w_k));
    for i in 0..3 {
        for j in 0..3 {
            let plain: f64 = (0..4).map(|c| vec_mat(&x[i], wq)[c] * vec_mat(&w[j], wk)[c]).sum();
            assert!((scores[0][i][j] - plain).abs() < 1e-12);
        }
    }
    let (_, out) = tape_interformer(&layer, &store, &[(x.clone(), w.clone(), spans.clone())], 0.0);
    assert!(max_abs_diff(&out, &flatten(&interformer(&layer, &store, &x, &w, &spans))) < 1e-10);
}

pub fn single_non_word_column_gets_all_weight() {
    let (layer, store) = inter_layer(8, 2, true, 11);
    let mut r = rng(12);
    let x = rand_mat(&mut r, 3, 8);
    let w = rand_mat(&mut r, 1, 8);
    let scores = inter_scores(&layer, &store, &x, &w, &[(1, 3)]);
    assert!(scores.iter().flatten().all(|row| softmax(row) == vec![1.0]));
    let (_, out) = tape_interformer(&layer, &store, &[(x.clone(), w.clone(), vec![(1, 3)])], 0.0);
    assert!(max_abs_diff(&out, &flatten(&interformer(&layer, &store, &x, &w, &[(1, 3)]))) < 1e-10);
}

fn self_layer(d: usize, heads: usize, seed: u64) -> (SelfAttention, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let cfg = SelfAttnConfig {
        d_model: d,
        heads,
        d_ff: 2 * d,
        attn_dropout: 0.0,
        fc_dropout: 0.0,
    };
    let layer = SelfAttention::new(&mut store, "context", cfg, &mut rng(seed)).unwrap();
    (layer, store)
}

pub fn self_attention_matches_scalar_loops() {
    let mut r = rng(13);
    for seed in 0..10 {
        let (layer, store) = self_layer(8, 2, seed);
        let n = r.random_range(1..=5);
        let x = rand_mat(&mut r, n, 8);
        let reference = flatten(&self_attention(&layer, &store, &x));
        let (_, out) = tape_self_attention(&layer, &store, &[&x], 0.0);
        assert!(max_abs_diff(&out, &reference) < 1e-10);
        let fast = self_attention_forward(&layer, &store, &Tensor::new(vec![n, 8], flatten(&x)).unwrap(), &mut AttnMeter::new()).unwrap();
        assert!(max_abs_diff(fast.data(), &reference) < 1e-10);
    }
}

pub fn self_attention_is_direction_aware() {
    let (layer, store) = self_layer(8, 2, 14);
    let row = rand_mat(&mut rng(15), 1, 8).remove(0);
    // identical content at both positions, so only the offset sign differs
    let scores = self_scores(&layer, &store, &vec![row.clone(), row]);
    for h in &scores {
        assert!((h[0][1] - h[1][0]).abs() > 1e-9);
    }
}

pub fn single_character_attends_to_itself() {
    let (layer, store) = self_layer(8, 2, 16);
    let x = rand_mat(&mut rng(17), 1, 8);
    let scores = self_scores(&layer, &store, &x);
    assert!(scores.iter().all(|h| softmax(&h[0]) == vec![1.0]));
    let (_, out) = tape_self_attention(&layer, &store, &[&x], 0.0);
    assert!(max_abs_diff(&out, &flatten(&self_attention(&layer, &store, &x))) < 1e-12);
}

pub fn fast_inference_matches_tape_for_the_full_model() {
    for (seed, ablation) in [(0, Ablation::None), (1, Ablation::NoRpe), (2, Ablation::NoTag)] {
        let (model, corpus) = tiny_model(tiny_config(8, 2, ablation), seed);
        for s in &corpus {
            let input = model.encode(s).unwrap();
            let tape = model.emissions(&input).unwrap();
            let fast = nflat_emissions(&model, &input, &mut AttnMeter::new()).unwrap();
            assert!(max_abs_diff(&tape, &fast) < 1e-10);
        }
    }
}

pub fn flat_without_words_is_self_attention_over_characters() {
    let mut r = rng(18);
    let enc = FlatEncoder::<f64>::new(8, 2, 16, &mut r).unwrap();
    let chars: Vec<char> = "abcd".chars().collect();
    let lattice = build_flat_lattice(&chars, &append_non_word(vec![], 4));
    assert_eq!(lattice.len(), 4);
    let x = rand_mat(&mut r, 4, 8);
    let out = enc
        .forward(&lattice, &Tensor::new(vec![4, 8], flatten(&x)).unwrap(), &mut AttnMeter::new())
        .unwrap();
    let spans: Vec<(usize, usize)> = (1..=4).map(|k| (k, k)).collect();
    let reference = flatten(&interformer(&enc.layer, &enc.store, &x, &x, &spans));
    assert!(max_abs_diff(out.data(), &reference) < 1e-10);
}

pub fn flat_returns_character_rows_of_full_lattice_attention() {
    let mut r = rng(19);
    let enc = FlatEncoder::<f64>::new(8, 2, 16, &mut r).unwrap();
    let chars: Vec<char> = "abcab".chars().collect();
    let trie = build_trie(&["ab", "bc", "cab"]).unwrap();
    let lattice = build_flat_lattice(&chars, &match_words(&trie, &chars, 10));
    assert_eq!(lattice.len(), 9);
    let x = rand_mat(&mut r, 9, 8);
    let mut meter = AttnMeter::new();
    let out = enc
        .forward(&lattice, &Tensor::new(vec![9, 8], flatten(&x)).unwrap(), &mut meter)
        .unwrap();
    assert_eq!(meter.cells(), 2 * 81);
    let full = interformer(&enc.layer, &enc.store, &x, &x, &lattice.spans());
    assert!(max_abs_diff(out.data(), &flatten(&full[..5].to_vec())) < 1e-10);
}
