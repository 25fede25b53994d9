//! Reference implementations written as plain loops over `f64`, sharing no
//! code with the tape, plus small builders used by several test targets.
#![allow(dead_code)]

use std::collections::HashSet;

use nflat_core::autodiff::Tape;
use nflat_core::batch::{Batch, SentenceInput};
use nflat_core::config::{Ablation, ModelConfig};
use nflat_core::context::SelfAttention;
use nflat_core::crf::{CrfWeights, LabelSchema};
use nflat_core::data::Sentence;
use nflat_core::interformer::InterFormer;
use nflat_core::lexicon::MatchedWord;
use nflat_core::model::{char_vocabulary, Nflat, Pretrained};
use nflat_core::nn::{Ctx, FeedForward, LayerNorm, ModelRng};
use nflat_core::params::{ParamId, ParamStore};
use nflat_core::tensor::Tensor;
use rand::{Rng, SeedableRng};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ModelRng {
    ModelRng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut ModelRng, rows: usize, cols: usize) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// sin on even dimensions, cos on odd, evaluated directly.
pub fn sinusoid(span: i64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let angle = span as f64 / 10000f64.powf((k - k % 2) as f64 / d as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Row vector times a `[rows, cols]` matrix.
pub fn vec_mat(x: &[f64], w: &Tensor<f64>) -> Vec<f64> {
    let cols = w.shape()[1];
    let mut out = vec![0.0; cols];
    for (r, &xr) in x.iter().enumerate() {
        for c in 0..cols {
            out[c] += xr * w.at(&[r, c]);
        }
    }
    out
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn layer_norm(x: &[f64], norm: &LayerNorm, store: &ParamStore<f64>) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    let (g, b) = (store.get(norm.gain).data(), store.get(norm.bias).data());
    x.iter()
        .enumerate()
        .map(|(k, v)| (v - mean) / (var + 1e-12).sqrt() * g[k] + b[k])
        .collect()
}

fn ffn(x: &[f64], f: &FeedForward, store: &ParamStore<f64>) -> Vec<f64> {
    let mut h = vec_mat(x, store.get(f.inner.weight));
    for (v, b) in h.iter_mut().zip(store.get(f.inner.bias).data()) {
        *v = (*v + b).max(0.0);
    }
    let mut y = vec_mat(&h, store.get(f.outer.weight));
    for (v, b) in y.iter_mut().zip(store.get(f.outer.bias).data()) {
        *v += b;
    }
    y
}

fn head_vec(store: &ParamStore<f64>, id: ParamId, head: usize, hd: usize) -> &[f64] {
    &store.get(id).data()[head * hd..(head + 1) * hd]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative encoding of one character/word pair: `ReLU(W_r (p_head ⊕ p_tail))`.
pub fn inter_rel(layer: &InterFormer, store: &ParamStore<f64>, i: usize, span: (usize, usize)) -> Vec<f64> {
    let d = layer.config.d_model;
    let mut p = sinusoid(i as i64 - span.0 as i64, d);
    p.extend(sinusoid(i as i64 - span.1 as i64, d));
    let (wh, wt) = (store.get(layer.w_r_head), store.get(layer.w_r_tail));
    (0..d)
        .map(|c| {
            let s: f64 = (0..2 * d)
                .map(|r| p[r] * if r < d { wh.at(&[r, c]) } else { wt.at(&[r - d, c]) })
                .sum();
            s.max(0.0)
        })
        .collect()
}

/// Inter-attention scores `[head][char][word]` for 1-based character positions.
pub fn inter_scores(layer: &InterFormer, store: &ParamStore<f64>, x: &Mat, words: &Mat, spans: &[(usize, usize)]) -> Vec<Mat> {
    let cfg = layer.config;
    let hd = cfg.head_dim();
    let q: Mat = x.iter().map(|r| vec_mat(r, store.get(layer.w_q))).collect();
    let k: Mat = words.iter().map(|r| vec_mat(r, store.get(layer.w_k))).collect();
    (0..cfg.heads)
        .map(|s| {
            let (u, v) = (head_vec(store, layer.u, s, hd), head_vec(store, layer.v, s, hd));
            let sl = s * hd..(s + 1) * hd;
            (0..x.len())
                .map(|i| {
                    (0..words.len())
                        .map(|j| {
                            let qi = &q[i][sl.clone()];
                            let qu: Vec<f64> = qi.iter().zip(u).map(|(a, b)| a + b).collect();
                            let mut a = dot(&qu, &k[j][sl.clone()]);
                            if cfg.relative_positions {
                                let r = inter_rel(layer, store, i + 1, spans[j]);
                                let qv: Vec<f64> = qi.iter().zip(v).map(|(a, b)| a + b).collect();
                                a += dot(&qv, &r[sl.clone()]);
                            }
                            a
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Multi-head attention output from per-head scores, heads concatenated.
fn attend(scores: &[Mat], values: &Mat, hd: usize) -> Mat {
    let n = scores[0].len();
    (0..n)
        .map(|i| {
            let mut out = vec![0.0; scores.len() * hd];
            for (s, sc) in scores.iter().enumerate() {
                let w = softmax(&sc[i]);
                for (j, wj) in w.iter().enumerate() {
                    for t in 0..hd {
                        out[s * hd + t] += wj * values[j][s * hd + t];
                    }
                }
            }
            out
        })
        .collect()
}

pub fn residual_blocks(x: &Mat, att: &Mat, norm_attn: &LayerNorm, f: &FeedForward, norm_ffn: &LayerNorm, store: &ParamStore<f64>) -> Mat {
    x.iter()
        .zip(att)
        .map(|(xi, ai)| {
            let h: Vec<f64> = xi.iter().zip(ai).map(|(a, b)| a + b).collect();
            let h = layer_norm(&h, norm_attn, store);
            let y = ffn(&h, f, store);
            let o: Vec<f64> = h.iter().zip(&y).map(|(a, b)| a + b).collect();
            layer_norm(&o, norm_ffn, store)
        })
        .collect()
}

/// Full inter-attention layer over one sentence.
pub fn interformer(layer: &InterFormer, store: &ParamStore<f64>, x: &Mat, words: &Mat, spans: &[(usize, usize)]) -> Mat {
    let scores = inter_scores(layer, store, x, words, spans);
    let v: Mat = words.iter().map(|r| vec_mat(r, store.get(layer.w_v))).collect();
    let att = attend(&scores, &v, layer.config.head_dim());
    residual_blocks(x, &att, &layer.norm_attn, &layer.ffn, &layer.norm_ffn, store)
}

/// Self-attention scores `[head][i][j]` with the signed distance `i - j`.
pub fn self_scores(layer: &SelfAttention, store: &ParamStore<f64>, x: &Mat) -> Vec<Mat> {
    let cfg = layer.config;
    let hd = cfg.d_model / cfg.heads;
    let q: Mat = x.iter().map(|r| vec_mat(r, store.get(layer.w_q))).collect();
    let k: Mat = x.iter().map(|r| vec_mat(r, store.get(layer.w_k))).collect();
    let n = x.len();
    (0..cfg.heads)
        .map(|s| {
            let (u, v) = (head_vec(store, layer.u, s, hd), head_vec(store, layer.v, s, hd));
            let sl = s * hd..(s + 1) * hd;
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let r = vec_mat(&sinusoid(i as i64 - j as i64, cfg.d_model), store.get(layer.w_r));
                            let qi = &q[i][sl.clone()];
                            let qu: Vec<f64> = qi.iter().zip(u).map(|(a, b)| a + b).collect();
                            let qv: Vec<f64> = qi.iter().zip(v).map(|(a, b)| a + b).collect();
                            dot(&qu, &k[j][sl.clone()]) + dot(&qv, &r[sl.clone()])
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn self_attention(layer: &SelfAttention, store: &ParamStore<f64>, x: &Mat) -> Mat {
    let scores = self_scores(layer, store, x);
    let v: Mat = x.iter().map(|r| vec_mat(r, store.get(layer.w_v))).collect();
    let att = attend(&scores, &v, layer.config.d_model / layer.config.heads);
    residual_blocks(x, &att, &layer.norm_attn, &layer.ffn, &layer.norm_ffn, store)
}

/// Matched words for the given 1-based spans; the last may be `<non_word>`.
pub fn words_for(spans: &[(usize, usize)], non_word_last: bool) -> Vec<MatchedWord> {
    spans
        .iter()
        .enumerate()
        .map(|(j, &(h, t))| MatchedWord {
            word_id: if non_word_last && j + 1 == spans.len() { None } else { Some(j) },
            surface: format!("w{j}"),
            head: h,
            tail: t,
        })
        .collect()
}

/// A sentence input with placeholder rows; only lengths and spans matter
/// to the encoders.
pub fn input_for(n: usize, spans: &[(usize, usize)]) -> SentenceInput {
    SentenceInput {
        char_rows: vec![0; n],
        words: words_for(spans, false),
        word_rows: (0..spans.len()).collect(),
        gold: None,
    }
}

/// Padded `[B, L, d]` tensor; padding rows hold `pad`.
pub fn padded(rows: &[&Mat], len: usize, d: usize, pad: f64) -> Tensor<f64> {
    let mut data = Vec::with_capacity(rows.len() * len * d);
    for m in rows {
        for k in 0..len {
            match m.get(k) {
                Some(r) => data.extend(r),
                None => data.extend(std::iter::repeat_n(pad, d)),
            }
        }
    }
    Tensor::new(vec![rows.len(), len, d], data).unwrap()
}

/// Tape forward of the inter-attention layer on a batch of sentences.
/// Returns the `[B, N, d]` output values.
pub fn tape_interformer(layer: &InterFormer, store: &ParamStore<f64>, sents: &[(Mat, Mat, Vec<(usize, usize)>)], pad: f64) -> (Batch, Vec<f64>) {
    let d = layer.config.d_model;
    let inputs: Vec<SentenceInput> = sents.iter().map(|(x, _, s)| input_for(x.len(), s)).collect();
    let refs: Vec<&SentenceInput> = inputs.iter().collect();
    let batch = Batch::new(&refs, 0, 0).unwrap();
    let xs: Vec<&Mat> = sents.iter().map(|s| &s.0).collect();
    let ws: Vec<&Mat> = sents.iter().map(|s| &s.1).collect();
    let mut tape = Tape::new(store);
    let c = tape.input(padded(&xs, batch.n, d, pad));
    let w = tape.input(padded(&ws, batch.m, d, pad));
    let out = layer.forward(&mut tape, c, w, &batch, &mut Ctx::eval()).unwrap();
    (batch.clone(), tape.value(out).data().to_vec())
}

pub fn tape_self_attention(layer: &SelfAttention, store: &ParamStore<f64>, sents: &[&Mat], pad: f64) -> (Batch, Vec<f64>) {
    let d = layer.config.d_model;
    let inputs: Vec<SentenceInput> = sents.iter().map(|x| input_for(x.len(), &[])).collect();
    let refs: Vec<&SentenceInput> = inputs.iter().collect();
    let batch = Batch::new(&refs, 0, 0).unwrap();
    let mut tape = Tape::new(store);
    let x = tape.input(padded(sents, batch.n, d, pad));
    let out = layer.forward(&mut tape, x, &batch, &mut Ctx::eval()).unwrap();
    (batch.clone(), tape.value(out).data().to_vec())
}

/// Rows `0..len` of sentence `b` from a `[B, N, d]` buffer.
pub fn rows_of(data: &[f64], b: usize, n: usize, d: usize, len: usize) -> Vec<f64> {
    data[b * n * d..(b * n + len) * d].to_vec()
}

/// Every label path of length `n` over `l` labels.
pub fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

/// Score of a path written out term by term.
pub fn brute_path_score(em: &[f64], w: CrfWeights<'_>, path: &[usize]) -> f64 {
    let l = w.labels;
    let mut s = w.start[path[0]];
    for t in 0..path.len() {
        s += em[t * l + path[t]];
        if t > 0 {
            s += w.trans[path[t - 1] * l + path[t]];
        }
    }
    s + w.end[*path.last().unwrap()]
}

pub fn brute_log_partition(em: &[f64], w: CrfWeights<'_>) -> f64 {
    let n = em.len() / w.labels;
    let scores: Vec<f64> = all_paths(n, w.labels).iter().map(|p| brute_path_score(em, w, p)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

pub fn brute_best_score(em: &[f64], w: CrfWeights<'_>) -> f64 {
    let n = em.len() / w.labels;
    all_paths(n, w.labels)
        .iter()
        .map(|p| brute_path_score(em, w, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random CRF instance: emissions `[n, l]`, transitions, start, end.
pub fn crf_instance(rng: &mut ModelRng, n: usize, l: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut v = |k: usize| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    (v(n * l), v(l * l), v(l), v(l))
}

/// O(n²) substring enumeration, sorted by `(head, tail)`.
pub fn brute_match(lexicon: &HashSet<String>, chars: &[char], max_len: usize) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for h in 0..chars.len() {
        for t in h + 1..chars.len().min(h + max_len) {
            let s: String = chars[h..=t].iter().collect();
            if lexicon.contains(&s) {
                out.push((s, h + 1, t + 1));
            }
        }
    }
    out
}

pub fn labelled(id: usize, text: &str, tags: &[&str]) -> Sentence {
    Sentence::new(id, text.chars().collect(), Some(tags.iter().map(|t| t.to_string()).collect())).unwrap()
}

/// A few short labelled sentences over the lexicon `{ab, bc, cab, ca}`.
pub fn toy_corpus() -> (Vec<Sentence>, Vec<String>) {
    let sents = vec![
        labelled(0, "abca", &["B-X", "E-X", "O", "O"]),
        labelled(1, "cab", &["B-Y", "M-Y", "E-Y"]),
        labelled(2, "bcd", &["O", "S-X", "O"]),
        labelled(3, "da", &["O", "O"]),
    ];
    let lex = ["ab", "bc", "cab", "ca"].iter().map(|s| s.to_string()).collect();
    (sents, lex)
}

pub fn schema_of(corpus: &[Sentence]) -> LabelSchema {
    LabelSchema::from_tags(corpus.iter().flat_map(|s| s.labels.as_ref().unwrap().iter().map(String::as_str))).unwrap()
}

/// Tiny model for gradient and invariance checks: dropout off.
pub fn tiny_config(d: usize, heads: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig {
        d_model: d,
        heads,
        is_less_head: false,
        char_embed_dropout: 0.0,
        word_embed_dropout: 0.0,
        fc_dropout2: 0.0,
        ablation,
        empty_row_fallback: true,
        ..ModelConfig::default()
    }
}

pub fn tiny_model(cfg: ModelConfig, seed: u64) -> (Nflat<f64>, Vec<Sentence>) {
    let (corpus, lex) = toy_corpus();
    let m = Nflat::new(
        cfg,
        schema_of(&corpus),
        char_vocabulary(&[&corpus]),
        &lex,
        Pretrained::default(),
        &mut rng(seed),
    )
    .unwrap();
    (m, corpus)
}
