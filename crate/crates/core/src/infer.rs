//! Tape-free single-sentence forward passes with an allocation meter on the
//! attention score and weight buffers.
//!
//! Relative encodings are produced one query row at a time from projected
//! sinusoid tables, so their memory stays `O(keys · d)` and is not metered.
//! Each attention stage holds its score buffer and its weight buffer at the
//! same time during the softmax, then releases both before the next stage.

use crate::attention::sinusoid_table;
use crate::autodiff::softmax_in_place;
use crate::batch::SentenceInput;
use crate::context::SelfAttention;
use crate::error::{Error, Result};
use crate::interformer::InterFormer;
use crate::model::Nflat;
use crate::nn::{FeedForward, LayerNorm, Linear, LAYER_NORM_EPS};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{dot, gemm_nn, Tensor};

/// Live and peak bytes of attention buffers, plus the number of score cells.
#[derive(Clone, Debug, Default)]
pub struct AttnMeter {
    live: usize,
    peak: usize,
    cells: u64,
    budget: Option<usize>,
}

impl AttnMeter {
    pub fn new() -> Self {
        AttnMeter::default()
    }

    /// Allocations that would push live bytes past `budget` fail.
    pub fn with_budget(budget: usize) -> Self {
        AttnMeter {
            budget: Some(budget),
            ..AttnMeter::default()
        }
    }

    pub fn alloc(&mut self, bytes: usize) -> Result<()> {
        let requested = self.live + bytes;
        if let Some(budget) = self.budget {
            if requested > budget {
                return Err(Error::MemoryBudget { requested, budget });
            }
        }
        self.live = requested;
        self.peak = self.peak.max(self.live);
        Ok(())
    }

    pub fn free(&mut self, bytes: usize) {
        self.live -= bytes;
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak
    }

    pub fn live_bytes(&self) -> usize {
        self.live
    }

    pub fn cells(&self) -> u64 {
        self.cells
    }
}

/// How the positional term of a score is formed.
pub enum RelSpec<'a> {
    None,
    /// `ReLU(W_head p(qh - kh) + W_tail p(qt - kt))` from query and key spans.
    Spans {
        queries: &'a [(usize, usize)],
        keys: &'a [(usize, usize)],
    },
    /// `W_r p(i - j)` over one sequence.
    Distance,
}

struct AttnWeights<'a, T> {
    heads: usize,
    wq: &'a Tensor<T>,
    wk: &'a Tensor<T>,
    wv: &'a Tensor<T>,
    u: &'a [T],
    v: &'a [T],
}

fn project<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Vec<T> {
    let (rows, d_in, d_out) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let mut out = vec![T::zero(); rows * d_out];
    gemm_nn(x.data(), w.data(), &mut out, rows, d_in, d_out);
    out
}

fn linear<T: Scalar>(store: &ParamStore<T>, l: &Linear, x: &[T], rows: usize) -> Vec<T> {
    let (w, b) = (store.get(l.weight), store.get(l.bias).data());
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    let mut out: Vec<T> = b.iter().copied().cycle().take(rows * d_out).collect();
    let mut prod = vec![T::zero(); rows * d_out];
    gemm_nn(x, w.data(), &mut prod, rows, d_in, d_out);
    for (o, p) in out.iter_mut().zip(prod) {
        *o = p + *o;
    }
    out
}

fn layer_norm<T: Scalar>(store: &ParamStore<T>, ln: &LayerNorm, x: &mut [T], d: usize) {
    let (g, b) = (store.get(ln.gain).data(), store.get(ln.bias).data());
    let dn = T::of(d as f64);
    let eps = T::of(LAYER_NORM_EPS);
    for row in x.chunks_mut(d) {
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let istd = T::one() / (var + eps).sqrt();
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * istd * g[k] + b[k];
        }
    }
}

/// `LN(h + FFN(h))` with `h = LN(x + attended)`.
fn residual_block<T: Scalar>(
    store: &ParamStore<T>,
    x: &[T],
    attended: &[T],
    norm_attn: &LayerNorm,
    ffn: &FeedForward,
    norm_ffn: &LayerNorm,
    d: usize,
) -> Vec<T> {
    let rows = x.len() / d;
    let mut h: Vec<T> = x.iter().zip(attended).map(|(&a, &b)| a + b).collect();
    layer_norm(store, norm_attn, &mut h, d);
    let mut f = linear(store, &ffn.inner, &h, rows);
    f.iter_mut().for_each(|v| *v = v.max(T::zero()));
    let f = linear(store, &ffn.outer, &f, rows);
    let mut out: Vec<T> = h.iter().zip(&f).map(|(&a, &b)| a + b).collect();
    layer_norm(store, norm_ffn, &mut out, d);
    out
}

/// Projected sinusoid table covering spans `-max_abs..=max_abs`.
fn projected_table<T: Scalar>(store: &ParamStore<T>, w: ParamId, max_abs: usize, d: usize) -> Result<Tensor<T>> {
    let table = sinusoid_table::<T>(max_abs, d)?;
    let rows = table.shape()[0];
    Tensor::new(vec![rows, d], project(&table, store.get(w)))
}

enum RelRows<T> {
    None,
    Spans {
        head: Tensor<T>,
        tail: Tensor<T>,
        max_abs: usize,
    },
    Distance {
        table: Tensor<T>,
        n: usize,
    },
}

impl<T: Scalar> RelRows<T> {
    /// Writes the encoding of every key for query `i` into `buf` (`[nk, d]`).
    fn fill(&self, spec: &RelSpec<'_>, i: usize, buf: &mut [T], d: usize) {
        match (self, spec) {
            (RelRows::Spans { head, tail, max_abs }, RelSpec::Spans { queries, keys }) => {
                let (qh, qt) = queries[i];
                for (row, &(kh, kt)) in buf.chunks_mut(d).zip(keys.iter()) {
                    let a = head.row(qh + max_abs - kh);
                    let b = tail.row(qt + max_abs - kt);
                    for ((r, &x), &y) in row.iter_mut().zip(a).zip(b) {
                        *r = (x + y).max(T::zero());
                    }
                }
            }
            (RelRows::Distance { table, n }, _) => {
                for (j, row) in buf.chunks_mut(d).enumerate() {
                    row.copy_from_slice(table.row(i + n - 1 - j));
                }
            }
            _ => {}
        }
    }
}

/// Unscaled multi-head attention of `xq` (`[nq, d]`) over `xkv` (`[nk, d]`).
/// Returns the concatenated heads, `[nq, d]`; zeros when there are no keys.
fn attention<T: Scalar>(
    w: &AttnWeights<'_, T>,
    xq: &Tensor<T>,
    xkv: &Tensor<T>,
    rel_spec: &RelSpec<'_>,
    rel: &RelRows<T>,
    meter: &mut AttnMeter,
) -> Result<Vec<T>> {
    let (nq, d) = (xq.shape()[0], xq.shape()[1]);
    let nk = xkv.shape()[0];
    let (h, hd) = (w.heads, d / w.heads);
    if nk == 0 {
        return Ok(vec![T::zero(); nq * d]);
    }
    let q = project(xq, w.wq);
    let k = project(xkv, w.wk);
    let v = project(xkv, w.wv);

    let cells = h * nq * nk;
    let bytes = cells * std::mem::size_of::<T>();
    meter.cells += cells as u64;
    meter.alloc(bytes)?;
    let mut scores = vec![T::zero(); cells];
    let has_rel = !matches!(rel, RelRows::None);
    let mut rbuf = vec![T::zero(); if has_rel { nk * d } else { 0 }];
    let mut qu = vec![T::zero(); d];
    let mut qv = vec![T::zero(); d];
    for i in 0..nq {
        let qi = &q[i * d..(i + 1) * d];
        for c in 0..d {
            qu[c] = qi[c] + w.u[c];
            qv[c] = qi[c] + w.v[c];
        }
        if has_rel {
            rel.fill(rel_spec, i, &mut rbuf, d);
        }
        for hh in 0..h {
            let span = hh * hd..(hh + 1) * hd;
            let row = &mut scores[(i * h + hh) * nk..(i * h + hh + 1) * nk];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d..(j + 1) * d];
                let mut val = dot(&qu[span.clone()], &kj[span.clone()]);
                if has_rel {
                    val += dot(&qv[span.clone()], &rbuf[j * d + span.start..j * d + span.end]);
                }
                *s = val;
            }
        }
    }
    if let Err(e) = meter.alloc(bytes) {
        meter.free(bytes);
        return Err(e);
    }
    let mut weights = scores.clone();
    for row in weights.chunks_mut(nk) {
        softmax_in_place(row);
    }
    drop(scores);
    meter.free(bytes);

    let mut out = vec![T::zero(); nq * d];
    for i in 0..nq {
        for hh in 0..h {
            let wrow = &weights[(i * h + hh) * nk..(i * h + hh + 1) * nk];
            let orow = &mut out[i * d + hh * hd..i * d + (hh + 1) * hd];
            for (j, &a) in wrow.iter().enumerate() {
                let vj = &v[j * d + hh * hd..j * d + (hh + 1) * hd];
                for (o, &x) in orow.iter_mut().zip(vj) {
                    *o += a * x;
                }
            }
        }
    }
    drop(weights);
    meter.free(bytes);
    Ok(out)
}

fn inter_weights<'a, T: Scalar>(layer: &InterFormer, store: &'a ParamStore<T>) -> AttnWeights<'a, T> {
    AttnWeights {
        heads: layer.config.heads,
        wq: store.get(layer.w_q),
        wk: store.get(layer.w_k),
        wv: store.get(layer.w_v),
        u: store.get(layer.u).data(),
        v: store.get(layer.v).data(),
    }
}

/// Inter-attention layer for one sentence. `words` holds one row per span
/// in `spans` (1-based head, tail).
pub fn interformer_forward<T: Scalar>(
    layer: &InterFormer,
    store: &ParamStore<T>,
    chars: &Tensor<T>,
    words: &Tensor<T>,
    spans: &[(usize, usize)],
    meter: &mut AttnMeter,
) -> Result<Tensor<T>> {
    let (n, d) = (chars.shape()[0], layer.config.d_model);
    if chars.shape() != [n, d] || words.shape() != [spans.len(), d] {
        return Err(Error::shape("interformer_forward", chars.shape(), words.shape()));
    }
    if spans.is_empty() && !layer.config.empty_row_fallback {
        return Err(Error::DegenerateRow { sentence: 0, row: 0 });
    }
    let queries: Vec<(usize, usize)> = (1..=n).map(|i| (i, i)).collect();
    let spec = RelSpec::Spans { queries: &queries, keys: spans };
    let rel = if layer.config.relative_positions && !spans.is_empty() {
        let max_abs = n.max(spans.iter().map(|s| s.1).max().unwrap_or(1)) - 1;
        RelRows::Spans {
            head: projected_table(store, layer.w_r_head, max_abs, d)?,
            tail: projected_table(store, layer.w_r_tail, max_abs, d)?,
            max_abs,
        }
    } else {
        RelRows::None
    };
    let attended = attention(&inter_weights(layer, store), chars, words, &spec, &rel, meter)?;
    let out = residual_block(store, chars.data(), &attended, &layer.norm_attn, &layer.ffn, &layer.norm_ffn, d);
    Tensor::new(vec![n, d], out)
}

/// Character self-attention layer for one sentence.
pub fn self_attention_forward<T: Scalar>(
    layer: &SelfAttention,
    store: &ParamStore<T>,
    x: &Tensor<T>,
    meter: &mut AttnMeter,
) -> Result<Tensor<T>> {
    let (n, d) = (x.shape()[0], layer.config.d_model);
    if x.shape() != [n, d] || n == 0 {
        return Err(Error::shape("self_attention_forward", x.shape(), &[n, d]));
    }
    let w = AttnWeights {
        heads: layer.config.heads,
        wq: store.get(layer.w_q),
        wk: store.get(layer.w_k),
        wv: store.get(layer.w_v),
        u: store.get(layer.u).data(),
        v: store.get(layer.v).data(),
    };
    let rel = RelRows::Distance {
        table: projected_table(store, layer.w_r, n - 1, d)?,
        n,
    };
    let attended = attention(&w, x, x, &RelSpec::Distance, &rel, meter)?;
    let out = residual_block(store, x.data(), &attended, &layer.norm_attn, &layer.ffn, &layer.norm_ffn, d);
    Tensor::new(vec![n, d], out)
}

/// Full self-attention over a flat token sequence whose positions are
/// `spans`, using an inter-attention layer's parameters with the offsets
/// taken symmetrically between tokens. Returns the first `keep` rows.
pub fn flat_layer_forward<T: Scalar>(
    layer: &InterFormer,
    store: &ParamStore<T>,
    tokens: &Tensor<T>,
    spans: &[(usize, usize)],
    keep: usize,
    meter: &mut AttnMeter,
) -> Result<Tensor<T>> {
    let (len, d) = (spans.len(), layer.config.d_model);
    if tokens.shape() != [len, d] || keep > len {
        return Err(Error::shape("flat_forward", tokens.shape(), &[len, d]));
    }
    let spec = RelSpec::Spans { queries: spans, keys: spans };
    let rel = if layer.config.relative_positions && len > 0 {
        let max_abs = spans.iter().map(|s| s.1).max().unwrap_or(1) - 1;
        RelRows::Spans {
            head: projected_table(store, layer.w_r_head, max_abs, d)?,
            tail: projected_table(store, layer.w_r_tail, max_abs, d)?,
            max_abs,
        }
    } else {
        RelRows::None
    };
    let attended = attention(&inter_weights(layer, store), tokens, tokens, &spec, &rel, meter)?;
    let out = residual_block(store, tokens.data(), &attended, &layer.norm_attn, &layer.ffn, &layer.norm_ffn, d);
    Tensor::new(vec![keep, d], out[..keep * d].to_vec())
}

fn embed<T: Scalar>(store: &ParamStore<T>, table: ParamId, rows: &[usize], proj: Option<&Linear>) -> Result<Tensor<T>> {
    let t = store.get(table);
    let dim = t.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        if r >= t.shape()[0] {
            return Err(Error::Lookup { id: r, rows: t.shape()[0] });
        }
        data.extend_from_slice(t.row(r));
    }
    match proj {
        Some(p) => {
            let out = linear(store, p, &data, rows.len());
            let d = out.len() / rows.len().max(1);
            Tensor::new(vec![rows.len(), d], out)
        }
        None => Tensor::new(vec![rows.len(), dim], data),
    }
}

/// Emission scores of one encoded sentence, `[n * labels]` row-major, in
/// evaluation mode.
pub fn nflat_emissions<T: Scalar>(model: &Nflat<T>, input: &SentenceInput, meter: &mut AttnMeter) -> Result<Vec<f64>> {
    let (store, l) = (&model.store, &model.layers);
    let chars = embed(store, l.char_emb, &input.char_rows, l.char_proj.as_ref())?;
    let words = embed(store, l.word_emb, &input.word_rows, l.word_proj.as_ref())?;
    let spans: Vec<(usize, usize)> = input.words.iter().map(|w| (w.head, w.tail)).collect();
    let fused = interformer_forward(&l.inter, store, &chars, &words, &spans, meter)?;
    let h = self_attention_forward(&l.context, store, &fused, meter)?;
    let em = linear(store, &l.output, h.data(), input.len());
    Ok(em.iter().map(|v| v.as_f64()).collect())
}
