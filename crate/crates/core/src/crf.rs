//! Linear-chain CRF over per-character label scores: exact partition
//! function by the forward algorithm and exact MAP path by Viterbi.
//! Everything here runs in `f64` whatever the model precision.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TagScheme {
    Bmes,
    Bio,
}

/// Dense label indexing. Index 0 is always `O`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSchema {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    scheme: TagScheme,
}

impl LabelSchema {
    /// Collects the distinct tags of a corpus. The scheme is BMES when any
    /// `M-`, `E-` or `S-` tag appears, BIO otherwise.
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut set: Vec<String> = tags.into_iter().map(str::to_string).collect();
        set.sort();
        set.dedup();
        let scheme = if set
            .iter()
            .any(|t| t.starts_with("M-") || t.starts_with("E-") || t.starts_with("S-"))
        {
            TagScheme::Bmes
        } else {
            TagScheme::Bio
        };
        let mut labels = vec!["O".to_string()];
        labels.extend(set.into_iter().filter(|t| t != "O"));
        Self::new(labels, scheme)
    }

    pub fn new(labels: Vec<String>, scheme: TagScheme) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if l != "O" && !is_prefixed(l, scheme) {
                return Err(Error::UnknownTag(l.clone()));
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate label {l}")));
            }
        }
        Ok(LabelSchema { labels, index, scheme })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn scheme(&self) -> TagScheme {
        self.scheme
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, tag: &str) -> Result<usize> {
        self.index
            .get(tag)
            .copied()
            .ok_or_else(|| Error::UnknownTag(tag.to_string()))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn encode(&self, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter().map(|t| self.index_of(t)).collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.labels[i].clone()).collect()
    }
}

fn is_prefixed(tag: &str, scheme: TagScheme) -> bool {
    let prefixes: &[&str] = match scheme {
        TagScheme::Bmes => &["B-", "M-", "E-", "S-"],
        TagScheme::Bio => &["B-", "I-"],
    };
    prefixes.iter().any(|p| tag.len() > p.len() && tag.starts_with(p))
}

/// Borrowed transition parameters. `trans[prev * L + cur]`.
#[derive(Clone, Copy, Debug)]
pub struct CrfWeights<'a> {
    pub labels: usize,
    pub trans: &'a [f64],
    pub start: &'a [f64],
    pub end: &'a [f64],
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Unnormalised score of one label path.
pub fn path_score(emissions: &[f64], w: CrfWeights<'_>, path: &[usize]) -> f64 {
    let l = w.labels;
    let mut s = w.start[path[0]] + w.end[path[path.len() - 1]];
    for (t, &y) in path.iter().enumerate() {
        s += emissions[t * l + y];
        if t > 0 {
            s += w.trans[path[t - 1] * l + y];
        }
    }
    s
}

fn forward_table(emissions: &[f64], w: CrfWeights<'_>, n: usize) -> Vec<f64> {
    let l = w.labels;
    let mut alpha = vec![0.0; n * l];
    for y in 0..l {
        alpha[y] = w.start[y] + emissions[y];
    }
    for t in 1..n {
        for y in 0..l {
            let prev = &alpha[(t - 1) * l..t * l];
            alpha[t * l + y] =
                log_sum_exp((0..l).map(|p| prev[p] + w.trans[p * l + y])) + emissions[t * l + y];
        }
    }
    alpha
}

/// `log Z` over all `L^n` label paths.
pub fn log_partition(emissions: &[f64], w: CrfWeights<'_>) -> f64 {
    let l = w.labels;
    let n = emissions.len() / l;
    let alpha = forward_table(emissions, w, n);
    log_sum_exp((0..l).map(|y| alpha[(n - 1) * l + y] + w.end[y]))
}

/// Gradients of the negative log-likelihood.
#[derive(Clone, Debug)]
pub struct CrfGrads {
    pub emissions: Vec<f64>,
    pub trans: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// `-log p(gold | x)` and its gradients from forward-backward marginals.
pub fn nll_with_grads(emissions: &[f64], w: CrfWeights<'_>, gold: &[usize]) -> Result<(f64, CrfGrads)> {
    let l = w.labels;
    let n = emissions.len() / l;
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    if gold.len() != n {
        return Err(Error::shape("crf gold", &[gold.len()], &[n]));
    }
    if let Some(&bad) = gold.iter().find(|&&g| g >= l) {
        return Err(Error::LabelOutOfRange { index: bad, labels: l });
    }
    let alpha = forward_table(emissions, w, n);
    let mut beta = vec![0.0; n * l];
    beta[(n - 1) * l..].copy_from_slice(w.end);
    for t in (0..n - 1).rev() {
        for y in 0..l {
            beta[t * l + y] = log_sum_exp(
                (0..l).map(|c| w.trans[y * l + c] + emissions[(t + 1) * l + c] + beta[(t + 1) * l + c]),
            );
        }
    }
    let log_z = log_sum_exp((0..l).map(|y| alpha[(n - 1) * l + y] + w.end[y]));
    let nll = log_z - path_score(emissions, w, gold);

    let mut g = CrfGrads {
        emissions: vec![0.0; n * l],
        trans: vec![0.0; l * l],
        start: vec![0.0; l],
        end: vec![0.0; l],
    };
    for t in 0..n {
        for y in 0..l {
            g.emissions[t * l + y] = (alpha[t * l + y] + beta[t * l + y] - log_z).exp();
        }
    }
    g.start.copy_from_slice(&g.emissions[..l]);
    g.end.copy_from_slice(&g.emissions[(n - 1) * l..]);
    for t in 1..n {
        for a in 0..l {
            for b in 0..l {
                g.trans[a * l + b] += (alpha[(t - 1) * l + a]
                    + w.trans[a * l + b]
                    + emissions[t * l + b]
                    + beta[t * l + b]
                    - log_z)
                    .exp();
            }
        }
    }
    for (t, &y) in gold.iter().enumerate() {
        g.emissions[t * l + y] -= 1.0;
        if t > 0 {
            g.trans[gold[t - 1] * l + y] -= 1.0;
        }
    }
    g.start[gold[0]] -= 1.0;
    g.end[gold[n - 1]] -= 1.0;
    Ok((nll, g))
}

/// Highest-scoring path and its score. Ties resolve toward the lower label index.
pub fn viterbi(emissions: &[f64], w: CrfWeights<'_>) -> (Vec<usize>, f64) {
    let l = w.labels;
    let n = emissions.len() / l;
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let mut score: Vec<f64> = (0..l).map(|y| w.start[y] + emissions[y]).collect();
    let mut back = vec![0usize; n * l];
    for t in 1..n {
        let mut next = vec![0.0; l];
        for y in 0..l {
            let mut best = 0;
            let mut best_s = score[0] + w.trans[y];
            for p in 1..l {
                let s = score[p] + w.trans[p * l + y];
                if s > best_s {
                    best = p;
                    best_s = s;
                }
            }
            back[t * l + y] = best;
            next[y] = best_s + emissions[t * l + y];
        }
        score = next;
    }
    let mut last = 0;
    let mut best_s = score[0] + w.end[0];
    for y in 1..l {
        let s = score[y] + w.end[y];
        if s > best_s {
            last = y;
            best_s = s;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    (path, best_s)
}

/// Trainable transition scores.
#[derive(Clone, Copy, Debug)]
pub struct Crf {
    pub labels: usize,
    pub trans: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl Crf {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, labels: usize, rng: &mut R) -> Self {
        Crf {
            labels,
            trans: store.add(format!("{name}.trans"), Tensor::randn(vec![labels, labels], 0.01, rng)),
            start: store.add(format!("{name}.start"), Tensor::zeros(vec![labels])),
            end: store.add(format!("{name}.end"), Tensor::zeros(vec![labels])),
        }
    }

    /// Copies the parameters to `f64`.
    pub fn weights<T: Scalar>(&self, store: &ParamStore<T>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            store.get(self.trans).to_f64(),
            store.get(self.start).to_f64(),
            store.get(self.end).to_f64(),
        )
    }

    /// Summed NLL of a padded batch. `emissions`: `[B, N, L]`; only the first
    /// `lengths[b]` positions of each sentence count.
    pub fn batch_nll<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        emissions: Var,
        lengths: &[usize],
        gold: &[Vec<usize>],
    ) -> Result<Var> {
        let l = self.labels;
        let shape = tape.shape(emissions).to_vec();
        if shape.len() != 3 || shape[2] != l || shape[0] != lengths.len() || gold.len() != lengths.len() {
            return Err(Error::shape("crf", &shape, &[lengths.len(), 0, l]));
        }
        let n = shape[1];
        let (trans, start, end) = self.weights(tape.params());
        let w = CrfWeights {
            labels: l,
            trans: &trans,
            start: &start,
            end: &end,
        };
        let em = tape.value(emissions).to_f64();
        let mut total = 0.0;
        let mut g_em = vec![0.0; em.len()];
        let mut g_tr = vec![0.0; l * l];
        let mut g_st = vec![0.0; l];
        let mut g_en = vec![0.0; l];
        for (b, (&len, gold)) in lengths.iter().zip(gold).enumerate() {
            let off = b * n * l;
            let (nll, g) = nll_with_grads(&em[off..off + len * l], w, gold)?;
            total += nll;
            g_em[off..off + len * l].copy_from_slice(&g.emissions);
            for (a, x) in g_tr.iter_mut().zip(&g.trans) {
                *a += x;
            }
            for (a, x) in g_st.iter_mut().zip(&g.start) {
                *a += x;
            }
            for (a, x) in g_en.iter_mut().zip(&g.end) {
                *a += x;
            }
        }
        let to_t = |shape: Vec<usize>, v: &[f64]| Tensor::<T>::from_f64(shape, v);
        let grads = vec![
            to_t(shape.clone(), &g_em)?,
            to_t(vec![l, l], &g_tr)?,
            to_t(vec![l], &g_st)?,
            to_t(vec![l], &g_en)?,
        ];
        let tr = tape.param(self.trans);
        let st = tape.param(self.start);
        let en = tape.param(self.end);
        tape.fused_scalar(T::of(total), &[emissions, tr, st, en], grads)
    }

    pub fn decode<T: Scalar>(&self, store: &ParamStore<T>, emissions: &[f64]) -> Vec<usize> {
        let (trans, start, end) = self.weights(store);
        viterbi(
            emissions,
            CrfWeights {
                labels: self.labels,
                trans: &trans,
                start: &start,
                end: &end,
            },
        )
        .0
    }
}
