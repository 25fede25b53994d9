//! Padding of several sentences into one rectangular batch.

use crate::attention::InterAttnMask;
use crate::error::{Error, Result};
use crate::lexicon::MatchedWord;

/// One sentence after vocabulary lookup and lexicon matching.
#[derive(Clone, Debug)]
pub struct SentenceInput {
    pub char_rows: Vec<usize>,
    pub words: Vec<MatchedWord>,
    pub word_rows: Vec<usize>,
    pub gold: Option<Vec<usize>>,
}

impl SentenceInput {
    pub fn len(&self) -> usize {
        self.char_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.char_rows.is_empty()
    }
}

/// Sentences padded to the longest character and word sequence.
/// Padded slots reuse row `pad_row` and position 1; masks exclude them.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// padded character length
    pub n: usize,
    /// padded word length, at least 1
    pub m: usize,
    pub char_lens: Vec<usize>,
    pub word_lens: Vec<usize>,
    pub char_rows: Vec<usize>,
    pub word_rows: Vec<usize>,
    pub heads: Vec<usize>,
    pub tails: Vec<usize>,
    pub gold: Option<Vec<Vec<usize>>>,
}

impl Batch {
    pub fn new(inputs: &[&SentenceInput], char_pad_row: usize, word_pad_row: usize) -> Result<Self> {
        if inputs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptySentence);
        }
        let size = inputs.len();
        let n = inputs.iter().map(|s| s.len()).max().unwrap_or(1);
        let m = inputs.iter().map(|s| s.words.len()).max().unwrap_or(0).max(1);
        let mut b = Batch {
            size,
            n,
            m,
            char_lens: Vec::with_capacity(size),
            word_lens: Vec::with_capacity(size),
            char_rows: vec![char_pad_row; size * n],
            word_rows: vec![word_pad_row; size * m],
            heads: vec![1; size * m],
            tails: vec![1; size * m],
            gold: None,
        };
        let mut gold = Vec::with_capacity(size);
        for (bi, s) in inputs.iter().enumerate() {
            b.char_lens.push(s.len());
            b.word_lens.push(s.words.len());
            b.char_rows[bi * n..bi * n + s.len()].copy_from_slice(&s.char_rows);
            for (j, (w, &row)) in s.words.iter().zip(&s.word_rows).enumerate() {
                b.word_rows[bi * m + j] = row;
                b.heads[bi * m + j] = w.head;
                b.tails[bi * m + j] = w.tail;
            }
            if let Some(g) = &s.gold {
                gold.push(g.clone());
            }
        }
        if gold.len() == size {
            b.gold = Some(gold);
        }
        Ok(b)
    }

    pub fn inter_mask(&self) -> InterAttnMask {
        InterAttnMask::new(&self.char_lens, &self.word_lens, self.n, self.m)
    }

    /// `[B, N]` validity of character slots.
    pub fn char_valid(&self) -> Vec<bool> {
        let mut v = vec![false; self.size * self.n];
        for (b, &len) in self.char_lens.iter().enumerate() {
            v[b * self.n..b * self.n + len].fill(true);
        }
        v
    }
}
