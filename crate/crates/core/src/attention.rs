//! Pieces shared by inter-attention and self-attention: sinusoidal span
//! encodings, relative offsets, masks and the two-term score.
//!
//! Score tensors use the layout `[batch, query, head, 1, key]` so that the
//! per-query relative term and the head merge need no extra transposes.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::lexicon::MatchedWord;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive score for masked positions.
pub const MASK_FILL: f64 = -1e15;

/// Parameter-free sinusoid of a signed span: sin on even dimensions, cos on odd.
pub fn sinusoidal_encoding(span: i64, d_model: usize) -> Result<Vec<f64>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!("d_model must be even, got {d_model}")));
    }
    let mut out = vec![0.0; d_model];
    for k in 0..d_model / 2 {
        let angle = span as f64 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
    Ok(out)
}

/// Encodings of every span in `-max_abs..=max_abs`; row `k` holds span `k - max_abs`.
pub fn sinusoid_table<T: Scalar>(max_abs: usize, d_model: usize) -> Result<Tensor<T>> {
    let rows = 2 * max_abs + 1;
    let mut data = Vec::with_capacity(rows * d_model);
    for k in 0..rows {
        let enc = sinusoidal_encoding(k as i64 - max_abs as i64, d_model)?;
        data.extend(enc.into_iter().map(T::of));
    }
    Tensor::new(vec![rows, d_model], data)
}

/// Head and tail offsets between a character and a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelPosPair {
    pub head_offset: i64,
    pub tail_offset: i64,
}

impl RelPosPair {
    /// `char_pos` is 1-based; a character's head and tail coincide.
    pub fn between(char_pos: usize, word: &MatchedWord) -> Self {
        RelPosPair {
            head_offset: char_pos as i64 - word.head as i64,
            tail_offset: char_pos as i64 - word.tail as i64,
        }
    }
}

/// Validity of every (character, word) pair of a padded batch, laid out
/// `[batch, chars, words]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterAttnMask {
    pub batch: usize,
    pub rows: usize,
    pub cols: usize,
    pub valid: Vec<bool>,
}

impl InterAttnMask {
    pub fn new(char_lens: &[usize], word_lens: &[usize], rows: usize, cols: usize) -> Self {
        let batch = char_lens.len();
        let mut valid = vec![false; batch * rows * cols];
        for b in 0..batch {
            for i in 0..char_lens[b] {
                for j in 0..word_lens[b] {
                    valid[(b * rows + i) * cols + j] = true;
                }
            }
        }
        InterAttnMask {
            batch,
            rows,
            cols,
            valid,
        }
    }

    pub fn get(&self, b: usize, i: usize, j: usize) -> bool {
        self.valid[(b * self.rows + i) * self.cols + j]
    }

    pub fn row_has_valid(&self, b: usize, i: usize) -> bool {
        (0..self.cols).any(|j| self.get(b, i, j))
    }

    /// Additive bias shaped `[batch, rows, 1, 1, cols]`.
    pub fn bias<T: Scalar>(&self) -> Tensor<T> {
        mask_bias(&self.valid, vec![self.batch, self.rows, 1, 1, self.cols])
    }
}

/// `0` for valid positions and [`MASK_FILL`] elsewhere.
pub fn mask_bias<T: Scalar>(valid: &[bool], shape: Vec<usize>) -> Tensor<T> {
    let fill = T::of(MASK_FILL);
    let data = valid.iter().map(|&v| if v { T::zero() } else { fill }).collect();
    Tensor::new(shape, data).expect("mask length matches shape")
}

/// `softmax(mask(A))` with the mask given as an additive bias.
pub fn masked_softmax<T: Scalar>(tape: &mut Tape<'_, T>, scores: Var, bias: Var) -> Result<Var> {
    let masked = tape.add(scores, bias)?;
    tape.softmax(masked)
}

/// `(Q_i + u)ᵀ K_j + (Q_i + v)ᵀ R_ij` for every head, unscaled.
///
/// `q`: `[B, N, h, 1, hd]`, `k`: `[B, 1, h, M, hd]`, `rel`: `[B|1, N, h, M, hd]`,
/// `u`/`v`: `[h, 1, hd]`. Returns `[B, N, h, 1, M]`. Without `rel` only the
/// content term is computed.
pub fn attention_scores<T: Scalar>(
    tape: &mut Tape<'_, T>,
    q: Var,
    k: Var,
    rel: Option<Var>,
    u: Var,
    v: Var,
) -> Result<Var> {
    let (sq, sk) = (tape.shape(q).to_vec(), tape.shape(k).to_vec());
    if sq.len() != 5 || sk.len() != 5 || sq[4] != sk[4] || sq[2] != sk[2] {
        return Err(Error::shape("attention_scores", &sq, &sk));
    }
    let qu = tape.add(q, u)?;
    let content = tape.matmul_bt(qu, k)?;
    let scores = match rel {
        Some(r) => {
            let qv = tape.add(q, v)?;
            let positional = tape.matmul_bt(qv, r)?;
            tape.add(content, positional)?
        }
        None => content,
    };
    let cells = tape.value(scores).numel();
    tape.count_attention_cells(cells);
    Ok(scores)
}

/// Splits `[B, L, h·hd]` into the key layout `[B, 1, h, L, hd]`.
pub fn split_keys<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, l, d) = (s[0], s[1], s[2]);
    let hd = d / heads;
    let x = tape.reshape(x, vec![b, l, heads, hd])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, vec![b, 1, heads, l, hd])
}

/// Splits `[B, L, h·hd]` into the query layout `[B, L, h, 1, hd]`.
pub fn split_queries<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, l, d) = (s[0], s[1], s[2]);
    tape.reshape(x, vec![b, l, heads, 1, d / heads])
}

/// Weighted sum of values, heads concatenated back to `[B, N, h·hd]`.
pub fn attend<T: Scalar>(tape: &mut Tape<'_, T>, weights: Var, values: Var) -> Result<Var> {
    let out = tape.matmul(weights, values)?;
    let s = tape.shape(out).to_vec();
    tape.reshape(out, vec![s[0], s[1], s[2] * s[4]])
}
