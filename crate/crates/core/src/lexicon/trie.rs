use crate::error::{Error, Result};

/// Longest word considered during matching unless configured otherwise.
pub const DEFAULT_MAX_MATCH_LEN: usize = 10;

/// Single characters are never reported as matches.
const MIN_MATCH_LEN: usize = 2;

#[derive(Clone, Debug, Default)]
struct TrieNode {
    // sorted by char
    children: Vec<(char, u32)>,
    word: Option<usize>,
}

impl TrieNode {
    fn child(&self, c: char) -> Option<u32> {
        self.children
            .binary_search_by_key(&c, |&(k, _)| k)
            .ok()
            .map(|i| self.children[i].1)
    }
}

/// Character trie over a lexicon. Word ids are dense and assigned in
/// first-insertion order.
#[derive(Clone, Debug)]
pub struct LexiconTrie {
    nodes: Vec<TrieNode>,
    words: Vec<String>,
}

impl Default for LexiconTrie {
    fn default() -> Self {
        LexiconTrie {
            nodes: vec![TrieNode::default()],
            words: Vec::new(),
        }
    }
}

impl LexiconTrie {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a word and returns its id; re-inserting returns the existing id.
    pub fn insert(&mut self, word: &str) -> usize {
        let mut node = 0usize;
        for c in word.chars() {
            node = match self.nodes[node].child(c) {
                Some(n) => n as usize,
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    let children = &mut self.nodes[node].children;
                    let pos = children.partition_point(|&(k, _)| k < c);
                    children.insert(pos, (c, id as u32));
                    id
                }
            };
        }
        if let Some(id) = self.nodes[node].word {
            return id;
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.nodes[node].word = Some(id);
        id
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        let mut node = 0usize;
        for c in word.chars() {
            node = self.nodes[node].child(c)? as usize;
        }
        self.nodes[node].word
    }

    pub fn contains(&self, word: &str) -> bool {
        self.get(word).is_some()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn build_trie<S: AsRef<str>>(words: &[S]) -> Result<LexiconTrie> {
    let mut trie = LexiconTrie::new();
    for (i, w) in words.iter().enumerate() {
        let w = w.as_ref();
        if w.is_empty() {
            return Err(Error::EmptyWord(i));
        }
        trie.insert(w);
    }
    Ok(trie)
}

/// A lexicon hit inside a sentence. Positions are 1-based and inclusive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchedWord {
    /// Lexicon id, `None` for the `<non_word>` entry.
    pub word_id: Option<usize>,
    pub surface: String,
    pub head: usize,
    pub tail: usize,
}

impl MatchedWord {
    pub fn non_word(n: usize) -> Self {
        MatchedWord {
            word_id: None,
            surface: super::NON_WORD.to_string(),
            head: 1,
            tail: n,
        }
    }

    pub fn is_non_word(&self) -> bool {
        self.word_id.is_none()
    }

    pub fn len(&self) -> usize {
        self.tail + 1 - self.head
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Every lexicon word occurring as a contiguous substring of `chars`, with
/// length between 2 and `max_len`, sorted by `(head, tail)`.
pub fn match_words(trie: &LexiconTrie, chars: &[char], max_len: usize) -> Vec<MatchedWord> {
    let mut out = Vec::new();
    for start in 0..chars.len() {
        let mut node = 0usize;
        for end in start..chars.len().min(start + max_len) {
            match trie.nodes[node].child(chars[end]) {
                Some(next) => node = next as usize,
                None => break,
            }
            let len = end + 1 - start;
            if len < MIN_MATCH_LEN {
                continue;
            }
            if let Some(id) = trie.nodes[node].word {
                out.push(MatchedWord {
                    word_id: Some(id),
                    surface: chars[start..=end].iter().collect(),
                    head: start + 1,
                    tail: end + 1,
                });
            }
        }
    }
    out
}

/// Appends the sentence-spanning `<non_word>` entry.
pub fn append_non_word(mut matches: Vec<MatchedWord>, n: usize) -> Vec<MatchedWord> {
    matches.push(MatchedWord::non_word(n));
    matches
}
