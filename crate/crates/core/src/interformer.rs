//! Inter-attention fusion encoder: characters query the matched-word
//! sequence, with a ReLU-projected encoding of the head and tail offsets
//! between each character and each word, followed by a feed-forward block.
//! Both sublayers are wrapped as `LayerNorm(x + sublayer(x))`.

use rand::Rng;

use crate::attention::{
    attend, attention_scores, masked_softmax, sinusoid_table, sinusoidal_encoding, split_keys,
    split_queries, RelPosPair,
};
use crate::autodiff::{Tape, Var};
use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::nn::{head_bias, Ctx, FeedForward, LayerNorm};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterFormerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub attn_dropout: f64,
    pub fc_dropout: f64,
    /// Adds the relative-position term; off for the `-RPE` ablation.
    pub relative_positions: bool,
    /// Characters without any valid word pass through the residual path
    /// instead of raising [`Error::DegenerateRow`].
    pub empty_row_fallback: bool,
}

impl InterFormerConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!("d_model must be even, got {}", self.d_model)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct InterFormer {
    pub config: InterFormerConfig,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// Rows of the relative projection acting on the head-offset encoding.
    pub w_r_head: ParamId,
    /// Rows acting on the tail-offset encoding.
    pub w_r_tail: ParamId,
    pub u: ParamId,
    pub v: ParamId,
    pub ffn: FeedForward,
    pub norm_attn: LayerNorm,
    pub norm_ffn: LayerNorm,
}

impl InterFormer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: InterFormerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mat = |store: &mut ParamStore<T>, key: &str, rng: &mut R| {
            store.add(format!("{name}.{key}"), Tensor::xavier(d, d, rng))
        };
        let w_q = mat(store, "w_q", rng);
        let w_k = mat(store, "w_k", rng);
        let w_v = mat(store, "w_v", rng);
        let w_r_head = mat(store, "w_r_head", rng);
        let w_r_tail = mat(store, "w_r_tail", rng);
        Ok(InterFormer {
            config,
            w_q,
            w_k,
            w_v,
            w_r_head,
            w_r_tail,
            u: head_bias(store, &format!("{name}.u"), config.heads, config.head_dim(), rng),
            v: head_bias(store, &format!("{name}.v"), config.heads, config.head_dim(), rng),
            ffn: FeedForward::new(store, name, d, config.d_ff, rng),
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
        })
    }

    /// `ReLU(W_r (p_head ⊕ p_tail))` for one character/word pair, evaluated
    /// directly from the stored parameters.
    pub fn rel_pos_encoding<T: Scalar>(&self, store: &ParamStore<T>, pair: RelPosPair) -> Result<Vec<T>> {
        let d = self.config.d_model;
        let mut concat = sinusoidal_encoding(pair.head_offset, d)?;
        concat.extend(sinusoidal_encoding(pair.tail_offset, d)?);
        let (wh, wt) = (store.get(self.w_r_head), store.get(self.w_r_tail));
        let mut out = vec![T::zero(); d];
        for (r, &p) in concat.iter().enumerate() {
            let row = if r < d { wh.row(r) } else { wt.row(r - d) };
            for (o, &w) in out.iter_mut().zip(row) {
                *o += T::of(p) * w;
            }
        }
        Ok(out.into_iter().map(|x| x.max(T::zero())).collect())
    }

    /// Relative encodings for every (character, word) slot of the batch in
    /// layout `[B, N, h, M, hd]`.
    fn relative<T: Scalar>(&self, tape: &mut Tape<'_, T>, batch: &Batch) -> Result<Var> {
        let (bsz, n, m) = (batch.size, batch.n, batch.m);
        let (d, h) = (self.config.d_model, self.config.heads);
        let max_abs = n.max(batch.tails.iter().copied().max().unwrap_or(1)) - 1;
        let table = tape.constant(sinusoid_table(max_abs, d)?);
        let wh = tape.param(self.w_r_head);
        let wt = tape.param(self.w_r_tail);
        let proj_head = tape.matmul(table, wh)?;
        let proj_tail = tape.matmul(table, wt)?;
        let mut head_idx = Vec::with_capacity(bsz * n * m);
        let mut tail_idx = Vec::with_capacity(bsz * n * m);
        for b in 0..bsz {
            for i in 1..=n {
                for j in 0..m {
                    head_idx.push(i + max_abs - batch.heads[b * m + j]);
                    tail_idx.push(i + max_abs - batch.tails[b * m + j]);
                }
            }
        }
        let gh = tape.gather_rows(proj_head, &head_idx)?;
        let gt = tape.gather_rows(proj_tail, &tail_idx)?;
        let r = tape.add(gh, gt)?;
        let r = tape.relu(r);
        let r = tape.reshape(r, vec![bsz, n, m, h, d / h])?;
        tape.permute(r, &[0, 1, 3, 2, 4])
    }

    /// Fuses word information into the characters.
    ///
    /// `chars`: `[B, N, d]`, `words`: `[B, M, d]` with the batch's word slots
    /// (including `<non_word>` unless ablated). Returns `[B, N, d]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        chars: Var,
        words: Var,
        batch: &Batch,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let expect_c = [batch.size, batch.n, cfg.d_model];
        let expect_w = [batch.size, batch.m, cfg.d_model];
        if tape.shape(chars) != expect_c || tape.shape(words) != expect_w {
            return Err(Error::shape("interformer", tape.shape(chars), tape.shape(words)));
        }
        let mask = batch.inter_mask();
        let mut empty_rows = Vec::new();
        for b in 0..batch.size {
            if batch.word_lens[b] == 0 {
                if !cfg.empty_row_fallback {
                    return Err(Error::DegenerateRow { sentence: b, row: 0 });
                }
                empty_rows.push(b);
            }
        }

        let wq = tape.param(self.w_q);
        let wk = tape.param(self.w_k);
        let wv = tape.param(self.w_v);
        let q = tape.matmul(chars, wq)?;
        let k = tape.matmul(words, wk)?;
        let v = tape.matmul(words, wv)?;
        let q = split_queries(tape, q, cfg.heads)?;
        let k = split_keys(tape, k, cfg.heads)?;
        let v = split_keys(tape, v, cfg.heads)?;

        let rel = if cfg.relative_positions {
            Some(self.relative(tape, batch)?)
        } else {
            None
        };
        let u = tape.param(self.u);
        let vb = tape.param(self.v);
        let scores = attention_scores(tape, q, k, rel, u, vb)?;
        let bias = tape.constant(mask.bias());
        let mut weights = masked_softmax(tape, scores, bias)?;
        if !empty_rows.is_empty() {
            let mut keep = Tensor::full(vec![batch.size, 1, 1, 1, 1], T::one());
            for b in empty_rows {
                keep.data_mut()[b] = T::zero();
            }
            let keep = tape.constant(keep);
            weights = tape.mul(weights, keep)?;
        }
        let weights = ctx.dropout(tape, weights, cfg.attn_dropout)?;
        let fused = attend(tape, weights, v)?;

        let h = tape.add(chars, fused)?;
        let h = self.norm_attn.forward(tape, h)?;
        let f = self.ffn.forward(tape, h, cfg.fc_dropout, ctx)?;
        let out = tape.add(h, f)?;
        self.norm_ffn.forward(tape, out)
    }
}
