//! Deterministic subword tokenizer.
//!
//! Words are lowercased (configurable) and split into fixed-width character
//! chunks; each chunk is hashed into a bucketed vocabulary. The scheme is
//! self-contained (no vocab files), deterministic across runs and platforms,
//! and produces multi-subtoken words so that word/subtoken alignment is
//! exercised the same way it would be with a learned subword vocabulary.
//!
//! Layout of a tokenized state: `[CLS]`, the subtokens of the original words,
//! then for each appended event its separator `</event>` and subtokens, then
//! `[SEP]`. Only subtokens of original words map back to a word index;
//! special tokens and appended-event positions map to `None`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word used in state text to mark the start of an appended event.
pub const EVENT_SEPARATOR: &str = "</event>";

pub const CLS_ID: usize = 0;
pub const SEP_ID: usize = 1;
pub const EVENT_SEP_ID: usize = 2;
/// First id available to hashed subword chunks.
pub const FIRST_CHUNK_ID: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TokenizerConfig {
    /// Total vocabulary size including the reserved special ids.
    pub vocab_size: usize,
    /// Maximum characters per subword chunk.
    pub max_subtoken_len: usize,
    /// Maximum subtokens per encoded state, including `[CLS]`/`[SEP]`.
    pub max_len: usize,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vocab_size: 4096,
            max_subtoken_len: 6,
            max_len: 128,
            lowercase: true,
        }
    }
}

/// Result of tokenizing a state text.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenization {
    /// Vocabulary id per subtoken, `[CLS]` first and `[SEP]` last.
    pub ids: Vec<usize>,
    /// Original-word index per subtoken; `None` for special tokens and for
    /// every appended-event position.
    pub subtoken_to_word: Vec<Option<usize>>,
    /// Number of original words this state was built from.
    pub n_original_words: usize,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Subtoken indices that carry original-text content (the scored region).
    pub fn original_positions(&self) -> Vec<usize> {
        self.subtoken_to_word
            .iter()
            .enumerate()
            .filter_map(|(i, w)| w.map(|_| i))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    cfg: TokenizerConfig,
}

impl Tokenizer {
    pub fn new(cfg: TokenizerConfig) -> Self {
        assert!(cfg.vocab_size > FIRST_CHUNK_ID, "vocab too small");
        assert!(cfg.max_subtoken_len >= 1);
        assert!(cfg.max_len >= 4, "max_len must fit [CLS], content, [SEP]");
        Tokenizer { cfg }
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.cfg
    }

    /// Split one word into subword chunks of at most `max_subtoken_len` chars.
    pub fn chunks_of(&self, word: &str) -> Vec<String> {
        let w = if self.cfg.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<char> = w.chars().collect();
        chars
            .chunks(self.cfg.max_subtoken_len)
            .map(|c| c.iter().collect())
            .collect()
    }

    fn chunk_id(&self, chunk: &str) -> usize {
        let buckets = self.cfg.vocab_size - FIRST_CHUNK_ID;
        FIRST_CHUNK_ID + (fnv1a64(chunk.as_bytes()) % buckets as u64) as usize
    }

    /// Tokenize a state text: `words[..n_original]` is the original text and
    /// the rest is the appended-event region. The appended region is
    /// truncated from its end if the encoded state would exceed `max_len`;
    /// the original region is never truncated and overflowing it is an error.
    pub fn tokenize_state(&self, words: &[String], n_original: usize) -> Result<Tokenization> {
        assert!(n_original <= words.len());
        let mut ids = vec![CLS_ID];
        let mut word_of: Vec<Option<usize>> = vec![None];
        for (w, word) in words.iter().enumerate().take(n_original) {
            if word.is_empty() {
                return Err(Error::Shape(format!("empty token at word {w}")));
            }
            for chunk in self.chunks_of(word) {
                ids.push(self.chunk_id(&chunk));
                word_of.push(Some(w));
            }
        }
        if ids.len() + 1 > self.cfg.max_len {
            return Err(Error::Shape(format!(
                "original text needs {} subtokens but the encoder limit is {}",
                ids.len() + 1,
                self.cfg.max_len
            )));
        }
        'append: for word in words.iter().skip(n_original) {
            let chunk_ids: Vec<usize> = if word == EVENT_SEPARATOR {
                vec![EVENT_SEP_ID]
            } else {
                self.chunks_of(word).iter().map(|c| self.chunk_id(c)).collect()
            };
            for id in chunk_ids {
                if ids.len() + 1 >= self.cfg.max_len {
                    break 'append;
                }
                ids.push(id);
                word_of.push(None);
            }
        }
        ids.push(SEP_ID);
        word_of.push(None);
        Ok(Tokenization {
            ids,
            subtoken_to_word: word_of,
            n_original_words: n_original,
        })
    }

    /// Tokenize a raw sample text (no appended events).
    pub fn tokenize_words(&self, words: &[String]) -> Result<Tokenization> {
        self.tokenize_state(words, words.len())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
