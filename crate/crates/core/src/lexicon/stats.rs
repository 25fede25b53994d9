use std::fmt;

use super::trie::{match_words, LexiconTrie};

/// Character and matched-word sequence lengths over a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchStats {
    /// `(char_len, matched_len)` per sentence.
    pub per_sentence: Vec<(usize, usize)>,
    pub avg_char_len: f64,
    pub max_char_len: usize,
    pub avg_matched_len: f64,
    pub max_matched_len: usize,
}

pub fn match_stats<S: AsRef<[char]>>(corpus: &[S], trie: &LexiconTrie, max_len: usize) -> MatchStats {
    let per_sentence: Vec<(usize, usize)> = corpus
        .iter()
        .map(|s| {
            let chars = s.as_ref();
            (chars.len(), match_words(trie, chars, max_len).len())
        })
        .collect();
    let n = per_sentence.len().max(1) as f64;
    MatchStats {
        avg_char_len: per_sentence.iter().map(|p| p.0 as f64).sum::<f64>() / n,
        max_char_len: per_sentence.iter().map(|p| p.0).max().unwrap_or(0),
        avg_matched_len: per_sentence.iter().map(|p| p.1 as f64).sum::<f64>() / n,
        max_matched_len: per_sentence.iter().map(|p| p.1).max().unwrap_or(0),
        per_sentence,
    }
}

impl fmt::Display for MatchStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences\t{}", self.per_sentence.len())?;
        writeln!(f, "{:<10}\t{:>8}\t{:>8}", "sequence", "avg", "max")?;
        writeln!(
            f,
            "{:<10}\t{:>8.2}\t{:>8}",
            "char", self.avg_char_len, self.max_char_len
        )?;
        write!(
            f,
            "{:<10}\t{:>8.2}\t{:>8}",
            "matched", self.avg_matched_len, self.max_matched_len
        )
    }
}
