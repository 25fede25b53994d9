//! Test bodies shared by the `masking` target and the acceptance suite.

use crate::common::*;
use nflat_core::attention::{masked_softmax, InterAttnMask};
use nflat_core::autodiff::Tape;
use nflat_core::config::Ablation;
use nflat_core::error::Error;
use nflat_core::interformer::{InterFormer, InterFormerConfig};
use nflat_core::model::{char_vocabulary, Nflat, Pretrained};
use nflat_core::nn::Ctx;
use nflat_core::params::ParamStore;
use nflat_core::synth::{gen_synthetic, SynthConfig};
use nflat_core::tensor::Tensor;
use rand::Rng;

fn softmax_with_mask(scores: &[f64], valid: &[bool]) -> Vec<f64> {
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let n = scores.len();
    let a = tape.input(Tensor::new(vec![1, 1, 1, 1, n], scores.to_vec()).unwrap());
    let mask = InterAttnMask {
        batch: 1,
        rows: 1,
        cols: n,
        valid: valid.to_vec(),
    };
    let b = tape.constant(mask.bias());
    let w = masked_softmax(&mut tape, a, b).unwrap();
    tape.value(w).data().to_vec()
}

pub fn masked_softmax_examples() {
    let w = softmax_with_mask(&[2.0, 5.0, 3.0], &[true, false, true]);
    let expect = softmax(&[2.0, 3.0]);
    assert!(w[1] < 1e-6);
    assert!((w[0] - expect[0]).abs() < 1e-12 && (w[2] - expect[1]).abs() < 1e-12);
    assert_eq!(softmax_with_mask(&[1.0, 9.0, -4.0], &[false, false, true]), vec![0.0, 0.0, 1.0]);
    let plain = softmax_with_mask(&[0.3, -1.0, 2.0], &[true; 3]);
    assert!(max_abs_diff(&plain, &softmax(&[0.3, -1.0, 2.0])) < 1e-15);
}

pub fn masked_weights_vanish_and_valid_weights_sum_to_one() {
    let mut r = rng(30);
    for _ in 0..100 {
        let n = r.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..50.0)).collect();
        let mut valid: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        valid[r.random_range(0..n)] = true;
        let w = softmax_with_mask(&scores, &valid);
        let mut total = 0.0;
        for (wk, v) in w.iter().zip(&valid) {
            if *v {
                total += wk;
            } else {
                assert!(*wk < 1e-6);
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }
}

fn synth_model(ablation: Ablation, lexicon: bool) -> (Nflat<f64>, Vec<nflat_core::data::Sentence>) {
    let corpus = gen_synthetic(&SynthConfig {
        train: 100,
        dev: 1,
        test: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let lex = if lexicon { corpus.lexicon.clone() } else { vec![] };
    let m = Nflat::new(
        tiny_config(16, 4, ablation),
        schema_of(&corpus.train),
        char_vocabulary(&[&corpus.train]),
        &lex,
        Pretrained::default(),
        &mut rng(31),
    )
    .unwrap();
    (m, corpus.train)
}

pub fn non_word_leaves_no_fully_masked_row() {
    for lexicon in [true, false] {
        let (model, sents) = synth_model(Ablation::None, lexicon);
        for chunk in sents.chunks(10) {
            let inputs: Vec<_> = chunk.iter().map(|s| model.encode(s).unwrap()).collect();
            let batch = model.batch(&inputs.iter().collect::<Vec<_>>()).unwrap();
            let mask = batch.inter_mask();
            for (b, s) in chunk.iter().enumerate() {
                for i in 0..batch.n {
                    assert_eq!(mask.row_has_valid(b, i), i < s.len());
                }
            }
        }
    }
}

pub fn padded_batches_match_single_sentences() {
    for ablation in [Ablation::None, Ablation::NoRpe, Ablation::NoTag] {
        let (model, sents) = synth_model(ablation, true);
        let labels = model.schema().len();
        for chunk in sents.chunks(10) {
            let inputs: Vec<_> = chunk.iter().map(|s| model.encode(s).unwrap()).collect();
            let batch = model.batch(&inputs.iter().collect::<Vec<_>>()).unwrap();
            let mut tape = Tape::new(&model.store);
            let em = model.forward(&mut tape, &batch, &mut Ctx::eval()).unwrap();
            let all = tape.value(em).data().to_vec();
            for (b, input) in inputs.iter().enumerate() {
                let single = model.emissions(input).unwrap();
                let batched = rows_of(&all, b, batch.n, labels, input.len());
                assert!(max_abs_diff(&single, &batched) < 1e-6);
            }
        }
    }
}

fn layer(rel: bool, fallback: bool) -> (InterFormer, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let cfg = InterFormerConfig {
        d_model: 8,
        heads: 2,
        d_ff: 16,
        attn_dropout: 0.0,
        fc_dropout: 0.0,
        relative_positions: rel,
        empty_row_fallback: fallback,
    };
    let l = InterFormer::new(&mut store, "inter", cfg, &mut rng(32)).unwrap();
    (l, store)
}

pub fn interformer_padding_invariance_with_garbage_padding() {
    let (l, store) = layer(true, false);
    let mut r = rng(33);
    let sents = vec![
        (rand_mat(&mut r, 5, 8), rand_mat(&mut r, 4, 8), vec![(1, 2), (2, 3), (4, 5), (1, 5)]),
        (rand_mat(&mut r, 2, 8), rand_mat(&mut r, 1, 8), vec![(1, 2)]),
        (rand_mat(&mut r, 3, 8), rand_mat(&mut r, 2, 8), vec![(2, 3), (1, 3)]),
    ];
    let (batch, out) = tape_interformer(&l, &store, &sents, 7.5);
    for (b, s) in sents.iter().enumerate() {
        let (_, single) = tape_interformer(&l, &store, std::slice::from_ref(s), 0.0);
        assert!(max_abs_diff(&single, &rows_of(&out, b, batch.n, 8, s.0.len())) < 1e-6);
    }
}

pub fn word_order_does_not_matter() {
    let (l, store) = layer(true, false);
    let mut r = rng(34);
    let x = rand_mat(&mut r, 4, 8);
    let w = rand_mat(&mut r, 4, 8);
    let spans = vec![(1, 2), (2, 4), (3, 4), (1, 4)];
    let (_, base) = tape_interformer(&l, &store, &[(x.clone(), w.clone(), spans.clone())], 0.0);
    let perm = [2, 0, 3, 1];
    let w2: Mat = perm.iter().map(|&k| w[k].clone()).collect();
    let s2: Vec<_> = perm.iter().map(|&k| spans[k]).collect();
    let (_, shuffled) = tape_interformer(&l, &store, &[(x, w2, s2)], 0.0);
    assert!(max_abs_diff(&base, &shuffled) < 1e-10);
}

pub fn empty_word_sequence_needs_fallback() {
    let (l, store) = layer(true, false);
    let x = rand_mat(&mut rng(35), 3, 8);
    let input = input_for(3, &[]);
    let batch = nflat_core::batch::Batch::new(&[&input], 0, 0).unwrap();
    let run = |l: &InterFormer, store: &ParamStore<f64>| {
        let mut tape = Tape::new(store);
        let c = tape.input(padded(&[&x], 3, 8, 0.0));
        let w = tape.input(Tensor::zeros(vec![1, 1, 8]));
        l.forward(&mut tape, c, w, &batch, &mut Ctx::eval()).map(|v| tape.value(v).clone())
    };
    assert!(matches!(run(&l, &store), Err(Error::DegenerateRow { .. })));
    let (fl, fstore) = layer(true, true);
    // fallback: attention contributes nothing, so the result is the
    // feed-forward block applied to LayerNorm(x)
    let out = run(&fl, &fstore).unwrap();
    let zeros = vec![vec![0.0; 8]; 3];
    let expect = residual_blocks(&x, &zeros, &fl.norm_attn, &fl.ffn, &fl.norm_ffn, &fstore);
    assert!(max_abs_diff(out.data(), &flatten(&expect)) < 1e-10);
}

pub fn ablated_tag_with_no_match_errors_without_fallback() {
    let (corpus, lex) = toy_corpus();
    let mut cfg = tiny_config(8, 2, Ablation::NoTag);
    cfg.empty_row_fallback = false;
    let model = Nflat::<f64>::new(cfg, schema_of(&corpus), char_vocabulary(&[&corpus]), &lex, Pretrained::default(), &mut rng(36)).unwrap();
    // "da" matches no lexicon word
    let input = model.encode(&corpus[3]).unwrap();
    assert!(input.words.is_empty());
    assert!(matches!(model.emissions(&input), Err(Error::DegenerateRow { .. })));
    assert!(model.emissions(&model.encode(&corpus[0]).unwrap()).is_ok());
}

pub fn attention_cells_are_inter_plus_self() {
    let (model, sents) = synth_model(Ablation::None, true);
    let heads = model.config().heads as u64;
    let self_heads = model.config().self_heads() as u64;
    for s in sents.iter().take(20) {
        let input = model.encode(s).unwrap();
        let batch = model.batch(&[&input]).unwrap();
        let mut tape = Tape::new(&model.store);
        model.forward(&mut tape, &batch, &mut Ctx::eval()).unwrap();
        let (n, m) = (s.len() as u64, input.words.len() as u64);
        assert_eq!(tape.attention_cells(), heads * n * m + self_heads * n * n);
    }
}
