//! Entity extraction from tag sequences and exact-match span scoring.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::crf::TagScheme;
use crate::error::{Error, Result};

/// A typed span with 1-based inclusive positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entity {
    pub kind: String,
    pub head: usize,
    pub tail: usize,
}

fn split_tag(tag: &str) -> Result<(char, &str)> {
    if tag == "O" {
        return Ok(('O', ""));
    }
    let mut it = tag.splitn(2, '-');
    match (it.next(), it.next()) {
        (Some(p), Some(kind)) if p.len() == 1 && !kind.is_empty() => Ok((p.chars().next().unwrap(), kind)),
        _ => Err(Error::UnknownTag(tag.to_string())),
    }
}

/// Maximal well-formed spans: `B M* E` or `S` under BMES, `B I*` under BIO.
/// Fragments that do not form such a span yield nothing.
pub fn extract_entities<S: AsRef<str>>(tags: &[S], scheme: TagScheme) -> Result<Vec<Entity>> {
    let mut out = Vec::new();
    // open span: (kind, head)
    let mut open: Option<(&str, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let pos = i + 1;
        let (p, kind) = split_tag(tag.as_ref())?;
        match scheme {
            TagScheme::Bmes => match p {
                'B' => open = Some((kind, pos)),
                'M' => {
                    if open.is_some_and(|(k, _)| k != kind) {
                        open = None;
                    }
                }
                'E' => {
                    if let Some((k, head)) = open.take() {
                        if k == kind {
                            out.push(Entity {
                                kind: kind.to_string(),
                                head,
                                tail: pos,
                            });
                        }
                    }
                }
                'S' => {
                    open = None;
                    out.push(Entity {
                        kind: kind.to_string(),
                        head: pos,
                        tail: pos,
                    });
                }
                'O' => open = None,
                _ => return Err(Error::UnknownTag(tag.as_ref().to_string())),
            },
            TagScheme::Bio => {
                let continues = p == 'I' && open.is_some_and(|(k, _)| k == kind);
                if !continues {
                    if let Some((k, head)) = open.take() {
                        out.push(Entity {
                            kind: k.to_string(),
                            head,
                            tail: pos - 1,
                        });
                    }
                }
                match p {
                    'B' => open = Some((kind, pos)),
                    'I' | 'O' => {}
                    _ => return Err(Error::UnknownTag(tag.as_ref().to_string())),
                }
            }
        }
    }
    if scheme == TagScheme::Bio {
        if let Some((k, head)) = open {
            out.push(Entity {
                kind: k.to_string(),
                head,
                tail: tags.len(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Score {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Score {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }
}

/// Micro-averaged scores plus a per-type breakdown.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall: Score,
    pub per_type: BTreeMap<String, Score>,
}

impl EvalReport {
    pub fn f1(&self) -> f64 {
        self.overall.f1
    }

    pub fn from_entities(gold: &[Vec<Entity>], pred: &[Vec<Entity>]) -> Self {
        let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
        for (g, p) in gold.iter().zip(pred) {
            let gs: HashSet<&Entity> = g.iter().collect();
            for e in g {
                counts.entry(e.kind.clone()).or_default().0 += 1;
            }
            for e in p {
                let c = counts.entry(e.kind.clone()).or_default();
                c.1 += 1;
                if gs.contains(e) {
                    c.2 += 1;
                }
            }
        }
        let (mut tg, mut tp, mut tc) = (0, 0, 0);
        let per_type = counts
            .into_iter()
            .map(|(k, (g, p, c))| {
                tg += g;
                tp += p;
                tc += c;
                (k, Score::from_counts(g, p, c))
            })
            .collect();
        EvalReport {
            overall: Score::from_counts(tg, tp, tc),
            per_type,
        }
    }
}

/// Scores predicted tag sequences against gold ones.
pub fn evaluate_tags<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>], scheme: TagScheme) -> Result<EvalReport> {
    let g = gold
        .iter()
        .map(|t| extract_entities(t, scheme))
        .collect::<Result<Vec<_>>>()?;
    let p = pred
        .iter()
        .map(|t| extract_entities(t, scheme))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_entities(&g, &p))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = |f: &mut fmt::Formatter<'_>, name: &str, s: &Score| {
            writeln!(
                f,
                "{name:<10}\tP={:.4}\tR={:.4}\tF1={:.4}\tgold={}\tpred={}\tcorrect={}",
                s.precision, s.recall, s.f1, s.gold, s.predicted, s.correct
            )
        };
        line(f, "overall", &self.overall)?;
        for (k, s) in &self.per_type {
            line(f, k, s)?;
        }
        Ok(())
    }
}
