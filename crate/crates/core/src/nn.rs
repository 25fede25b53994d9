//! Small parameterised layers shared by the encoders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Seedable generator owned by whoever drives training.
pub type ModelRng = ChaCha8Rng;

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Forward-pass mode. Dropout is active only when a generator is present.
pub struct Ctx<'r> {
    rng: Option<&'r mut ModelRng>,
}

impl<'r> Ctx<'r> {
    pub fn eval() -> Self {
        Ctx { rng: None }
    }

    pub fn train(rng: &'r mut ModelRng) -> Self {
        Ctx { rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub fn dropout<T: Scalar>(&mut self, tape: &mut Tape<'_, T>, x: Var, rate: f64) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let keep: Vec<bool> = (0..tape.value(x).numel())
                    .map(|_| rng.random::<f64>() >= rate)
                    .collect();
                tape.dropout_with_mask(x, &keep, rate)
            }
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), Tensor::xavier(fan_in, fan_out, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(vec![dim], T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// `max(0, x W1 + b1) W2 + b2`, dropout after each linear layer.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.ffn1"), d_model, d_ff, rng),
            outer: Linear::new(store, &format!("{name}.ffn2"), d_ff, d_model, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, dropout: f64, ctx: &mut Ctx<'_>) -> Result<Var> {
        let h = self.inner.forward(tape, x)?;
        let h = tape.relu(h);
        let h = ctx.dropout(tape, h, dropout)?;
        let y = self.outer.forward(tape, h)?;
        ctx.dropout(tape, y, dropout)
    }
}

/// Per-head bias vector shaped `[heads, 1, head_dim]`.
pub fn head_bias<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    heads: usize,
    head_dim: usize,
    rng: &mut R,
) -> ParamId {
    let std = (2.0 / (heads + head_dim) as f64).sqrt();
    store.add(name, Tensor::randn(vec![heads, 1, head_dim], std, rng))
}
