//! Flat-lattice baseline used for cost comparisons: matched words are
//! appended to the characters and one self-attention layer runs over all
//! `n + m` tokens, with head/tail offsets between every token pair.

use rand::Rng;

use crate::error::Result;
use crate::infer::{flat_layer_forward, AttnMeter};
use crate::interformer::{InterFormer, InterFormerConfig};
use crate::lexicon::MatchedWord;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatToken {
    pub surface: String,
    pub head: usize,
    pub tail: usize,
    /// lexicon id for word tokens, `None` for characters
    pub word_id: Option<usize>,
}

/// Characters in order, then words sorted by `(head, tail)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatLattice {
    pub tokens: Vec<FlatToken>,
    pub chars: usize,
}

impl FlatLattice {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> usize {
        self.tokens.len() - self.chars
    }

    pub fn spans(&self) -> Vec<(usize, usize)> {
        self.tokens.iter().map(|t| (t.head, t.tail)).collect()
    }
}

/// `<non_word>` entries are skipped; the flat lattice has no such token.
pub fn build_flat_lattice(chars: &[char], matches: &[MatchedWord]) -> FlatLattice {
    let mut words: Vec<&MatchedWord> = matches.iter().filter(|w| !w.is_non_word()).collect();
    words.sort_by_key(|w| (w.head, w.tail));
    let tokens = chars
        .iter()
        .enumerate()
        .map(|(k, c)| FlatToken {
            surface: c.to_string(),
            head: k + 1,
            tail: k + 1,
            word_id: None,
        })
        .chain(words.into_iter().map(|w| FlatToken {
            surface: w.surface.clone(),
            head: w.head,
            tail: w.tail,
            word_id: w.word_id,
        }))
        .collect();
    FlatLattice {
        tokens,
        chars: chars.len(),
    }
}

/// One flat self-attention layer with its own parameters.
#[derive(Clone, Debug)]
pub struct FlatEncoder<T> {
    pub store: ParamStore<T>,
    pub layer: InterFormer,
}

impl<T: Scalar> FlatEncoder<T> {
    pub fn new<R: Rng + ?Sized>(d_model: usize, heads: usize, d_ff: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let config = InterFormerConfig {
            d_model,
            heads,
            d_ff,
            attn_dropout: 0.0,
            fc_dropout: 0.0,
            relative_positions: true,
            empty_row_fallback: false,
        };
        let layer = InterFormer::new(&mut store, "flat", config, rng)?;
        Ok(FlatEncoder { store, layer })
    }

    /// `embeddings`: one row per lattice token. Returns the character rows.
    pub fn forward(&self, lattice: &FlatLattice, embeddings: &Tensor<T>, meter: &mut AttnMeter) -> Result<Tensor<T>> {
        flat_layer_forward(&self.layer, &self.store, embeddings, &lattice.spans(), lattice.chars, meter)
    }
}
