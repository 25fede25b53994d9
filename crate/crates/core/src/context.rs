//! Character-level context encoder: one layer of unscaled self-attention
//! whose relative term is a learned projection of the sinusoid of the
//! signed distance `i - j`, so direction and distance are both visible.

use rand::Rng;

use crate::attention::{attend, attention_scores, mask_bias, masked_softmax, sinusoid_table, split_keys, split_queries};
use crate::autodiff::{Tape, Var};
use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::nn::{head_bias, Ctx, FeedForward, LayerNorm};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfAttnConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub attn_dropout: f64,
    pub fc_dropout: f64,
}

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub config: SelfAttnConfig,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_r: ParamId,
    pub u: ParamId,
    pub v: ParamId,
    pub ffn: FeedForward,
    pub norm_attn: LayerNorm,
    pub norm_ffn: LayerNorm,
}

impl SelfAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: SelfAttnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.d_model;
        if config.heads == 0 || !d.is_multiple_of(config.heads) || !d.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "self-attention needs an even d_model divisible by heads, got {d}/{}",
                config.heads
            )));
        }
        let hd = d / config.heads;
        let mut mat = |key: &str, rng: &mut R| store.add(format!("{name}.{key}"), Tensor::xavier(d, d, rng));
        let w_q = mat("w_q", rng);
        let w_k = mat("w_k", rng);
        let w_v = mat("w_v", rng);
        let w_r = mat("w_r", rng);
        Ok(SelfAttention {
            config,
            w_q,
            w_k,
            w_v,
            w_r,
            u: head_bias(store, &format!("{name}.u"), config.heads, hd, rng),
            v: head_bias(store, &format!("{name}.v"), config.heads, hd, rng),
            ffn: FeedForward::new(store, name, d, config.d_ff, rng),
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
        })
    }

    /// Projected distance encodings in layout `[1, N, h, N, hd]`; entry
    /// `(i, j)` encodes `i - j`.
    fn relative<T: Scalar>(&self, tape: &mut Tape<'_, T>, n: usize) -> Result<Var> {
        let (d, h) = (self.config.d_model, self.config.heads);
        let table = tape.constant(sinusoid_table(n - 1, d)?);
        let wr = tape.param(self.w_r);
        let proj = tape.matmul(table, wr)?;
        let idx: Vec<usize> = (0..n)
            .flat_map(|i| (0..n).map(move |j| i + n - 1 - j))
            .collect();
        let r = tape.gather_rows(proj, &idx)?;
        let r = tape.reshape(r, vec![n, n, h, d / h])?;
        let r = tape.permute(r, &[0, 2, 1, 3])?;
        tape.reshape(r, vec![1, n, h, n, d / h])
    }

    /// `x`: `[B, N, d]` fused character features. Padded keys are masked.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, batch: &Batch, ctx: &mut Ctx<'_>) -> Result<Var> {
        let cfg = &self.config;
        let (bsz, n) = (batch.size, batch.n);
        if tape.shape(x) != [bsz, n, cfg.d_model] {
            return Err(Error::shape("self_attention", tape.shape(x), &[bsz, n, cfg.d_model]));
        }
        if n == 0 {
            return Err(Error::EmptySentence);
        }
        let wq = tape.param(self.w_q);
        let wk = tape.param(self.w_k);
        let wv = tape.param(self.w_v);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let q = split_queries(tape, q, cfg.heads)?;
        let k = split_keys(tape, k, cfg.heads)?;
        let v = split_keys(tape, v, cfg.heads)?;
        let rel = self.relative(tape, n)?;
        let u = tape.param(self.u);
        let vb = tape.param(self.v);
        let scores = attention_scores(tape, q, k, Some(rel), u, vb)?;
        let bias = tape.constant(mask_bias(&batch.char_valid(), vec![bsz, 1, 1, 1, n]));
        let weights = masked_softmax(tape, scores, bias)?;
        let weights = ctx.dropout(tape, weights, cfg.attn_dropout)?;
        let ctxv = attend(tape, weights, v)?;

        let h = tape.add(x, ctxv)?;
        let h = self.norm_attn.forward(tape, h)?;
        let f = self.ffn.forward(tape, h, cfg.fc_dropout, ctx)?;
        let out = tape.add(h, f)?;
        self.norm_ffn.forward(tape, out)
    }
}
