//! Lexicon matching: trie construction, word matching over a character
//! sequence, embedding tables and match statistics.

mod embedding;
mod stats;
mod trie;

pub use embedding::{load_embeddings, read_lexicon, EmbeddingTable, Vocab, NON_WORD, UNKNOWN};
pub use stats::{match_stats, MatchStats};
pub use trie::{append_non_word, build_trie, match_words, LexiconTrie, MatchedWord, DEFAULT_MAX_MATCH_LEN};
