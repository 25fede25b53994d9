use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const UNKNOWN: &str = "<unk>";
pub const NON_WORD: &str = "<non_word>";

/// Token to row mapping. Rows `0..len` are the tokens, followed by the
/// unknown-token row and the `<non_word>` row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            index.entry(t.clone()).or_insert(i);
        }
        Vocab { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Matrix rows including the two specials.
    pub fn rows(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn unknown_row(&self) -> usize {
        self.tokens.len()
    }

    pub fn non_word_row(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Row of a token, falling back to the unknown row.
    pub fn row_of(&self, token: &str) -> usize {
        if token == NON_WORD {
            return self.non_word_row();
        }
        self.get(token).unwrap_or(self.unknown_row())
    }
}

/// A [`Vocab`] with its `[rows, dim]` matrix.
#[derive(Clone, Debug)]
pub struct EmbeddingTable<T> {
    vocab: Vocab,
    matrix: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Builds a table from explicit token rows. The unknown row is the mean
    /// of the given rows, `<non_word>` starts at zero.
    pub fn from_rows(tokens: Vec<String>, rows: Vec<Vec<T>>, dim: usize) -> Result<Self> {
        if tokens.len() != rows.len() {
            return Err(Error::InvalidTensor("one row per token required".into()));
        }
        let mut data = Vec::with_capacity((rows.len() + 2) * dim);
        let mut mean = vec![T::zero(); dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::shape("embedding row", &[r.len()], &[dim]));
            }
            data.extend_from_slice(r);
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        if !rows.is_empty() {
            let n = T::of(rows.len() as f64);
            mean.iter_mut().for_each(|m| *m /= n);
        }
        data.extend_from_slice(&mean);
        data.extend(std::iter::repeat_n(T::zero(), dim));
        let matrix = Tensor::new(vec![tokens.len() + 2, dim], data)?;
        Ok(EmbeddingTable {
            vocab: Vocab::new(tokens),
            matrix,
        })
    }

    /// Normal-initialised rows for the given tokens.
    pub fn random<R: Rng + ?Sized>(tokens: Vec<String>, dim: usize, rng: &mut R) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let m = Tensor::<T>::randn(vec![tokens.len(), dim], std, rng);
        let rows = (0..tokens.len()).map(|i| m.row(i).to_vec()).collect();
        Self::from_rows(tokens, rows, dim).expect("consistent dimensions")
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tokens(&self) -> &[String] {
        self.vocab.tokens()
    }

    pub fn unknown_row(&self) -> usize {
        self.vocab.unknown_row()
    }

    pub fn non_word_row(&self) -> usize {
        self.vocab.non_word_row()
    }

    pub fn row_of(&self, token: &str) -> usize {
        self.vocab.row_of(token)
    }

    pub fn vector(&self, token: &str) -> &[T] {
        self.matrix.row(self.row_of(token))
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn into_parts(self) -> (Vocab, Tensor<T>) {
        (self.vocab, self.matrix)
    }
}

/// Reads a word2vec-style text file: optional `count dim` header, then one
/// token followed by `dim` floats per line.
pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingTable<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string())
}

pub(crate) fn parse_embeddings<T: Scalar>(text: &str, origin: &str) -> Result<EmbeddingTable<T>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut tokens = Vec::new();
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if tokens.is_empty() && dim.is_none() && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        let values = rest
            .iter()
            .map(|v| v.parse::<f64>().map(T::of))
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|e| parse_err(lineno, format!("bad float: {e}")))?;
        match dim {
            Some(d) if d != values.len() => {
                return Err(parse_err(
                    lineno,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            None if values.is_empty() => return Err(parse_err(lineno, "no vector values".into())),
            _ => dim = Some(values.len()),
        }
        tokens.push(token.to_string());
        rows.push(values);
    }
    let Some(dim) = dim.filter(|_| !tokens.is_empty()) else {
        return Err(parse_err(0, "empty embedding file".into()));
    };
    EmbeddingTable::from_rows(tokens, rows, dim)
}

/// Lexicon file: one word per line, blank lines ignored.
pub fn read_lexicon(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.split_whitespace().next().unwrap_or(l).to_string())
        .collect())
}
