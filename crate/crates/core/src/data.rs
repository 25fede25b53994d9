//! Sentences and the CoNLL-style character/tag file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: usize,
    pub chars: Vec<char>,
    pub labels: Option<Vec<String>>,
}

impl Sentence {
    pub fn new(id: usize, chars: Vec<char>, labels: Option<Vec<String>>) -> Result<Self> {
        if chars.is_empty() {
            return Err(Error::EmptySentence);
        }
        if let Some(l) = &labels {
            if l.len() != chars.len() {
                return Err(Error::shape("sentence labels", &[l.len()], &[chars.len()]));
            }
        }
        Ok(Sentence { id, chars, labels })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

/// One `char<space or tab>tag` per line, blank line between sentences. Lines
/// without a tag are allowed only if the whole file is untagged.
pub fn parse_conll(text: &str, origin: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut chars = Vec::new();
    let mut tags = Vec::new();
    let mut tagged: Option<bool> = None;
    let err = |line: usize, msg: &str| Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.to_string(),
    };
    let flush = |chars: &mut Vec<char>, tags: &mut Vec<String>, tagged: Option<bool>, out: &mut Vec<Sentence>| {
        if chars.is_empty() {
            return;
        }
        let labels = (tagged == Some(true)).then(|| std::mem::take(tags));
        out.push(Sentence {
            id: out.len(),
            chars: std::mem::take(chars),
            labels,
        });
        tags.clear();
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut chars, &mut tags, tagged, &mut out);
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap();
        let mut cs = token.chars();
        let c = cs.next().unwrap();
        if cs.next().is_some() {
            return Err(err(lineno, &format!("expected a single character, found {token:?}")));
        }
        let tag = fields.next();
        if fields.next().is_some() {
            return Err(err(lineno, "expected `char tag`"));
        }
        match (tagged, tag.is_some()) {
            (None, t) => tagged = Some(t),
            (Some(a), b) if a != b => return Err(err(lineno, "mixed tagged and untagged lines")),
            _ => {}
        }
        chars.push(c);
        if let Some(t) = tag {
            tags.push(t.to_string());
        }
    }
    flush(&mut chars, &mut tags, tagged, &mut out);
    Ok(out)
}

pub fn read_conll(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text, &path.display().to_string())
}

/// Raw text, one sentence per line; whitespace characters are dropped.
pub fn parse_raw(text: &str) -> Vec<Sentence> {
    text.lines()
        .map(|l| l.chars().filter(|c| !c.is_whitespace()).collect::<Vec<char>>())
        .filter(|c| !c.is_empty())
        .enumerate()
        .map(|(id, chars)| Sentence {
            id,
            chars,
            labels: None,
        })
        .collect()
}

/// Writes sentences with the given tags, `char<TAB>tag` per line.
pub fn write_tagged<W: Write>(out: &mut W, sentences: &[Sentence], tags: &[Vec<String>]) -> std::io::Result<()> {
    for (s, t) in sentences.iter().zip(tags) {
        for (c, tag) in s.chars.iter().zip(t) {
            writeln!(out, "{c}\t{tag}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes labelled sentences in the `char tag` format.
pub fn write_conll<W: Write>(out: &mut W, sentences: &[Sentence]) -> std::io::Result<()> {
    for s in sentences {
        let labels = s.labels.as_deref().unwrap_or(&[]);
        for (i, c) in s.chars.iter().enumerate() {
            match labels.get(i) {
                Some(t) => writeln!(out, "{c} {t}")?,
                None => writeln!(out, "{c}")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
