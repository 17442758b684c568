//! Deterministic longest-match subword tokenizer.
//!
//! Tokens never span word boundaries, which gives the property streaming
//! decoding relies on: once text ends at a boundary, appending more text can
//! only append tokens, never change the ones already produced. Vocabulary
//! files are plain text, one token per line, line number = token id, with the
//! first three lines reserved for BOS, EOS, and UNK.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::events::is_word_boundary;

/// Identifier of one vocabulary entry. Dense in `0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A sequence of token ids.
pub type TokenSeq = Vec<TokenId>;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary needs at least the three reserved lines (BOS, EOS, UNK)")]
    TooFewEntries,
    #[error("duplicate vocabulary entry {0:?}")]
    DuplicateEntry(String),
    #[error("empty vocabulary entry at line {0}")]
    EmptyEntry(usize),
    #[error("entry {0:?} contains an internal word-boundary character")]
    BoundaryInEntry(String),
    #[error("entry {entry:?} uses char {ch:?} that has no single-character entry")]
    MissingCharEntry { entry: String, ch: char },
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidTokenId { id: u32, size: usize },
    #[error("failed to read vocabulary file: {0}")]
    Io(#[from] std::io::Error),
}

/// Immutable subword vocabulary with reserved BOS/EOS/UNK ids 0/1/2.
///
/// The supported alphabet is the set of characters that have single-character
/// entries; every multi-character entry must be spelled from that alphabet so
/// greedy matching is total on supported text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, TokenId>,
    alphabet: HashSet<char>,
    max_entry_bytes: usize,
}

const BOS_ID: TokenId = TokenId(0);
const EOS_ID: TokenId = TokenId(1);
const UNK_ID: TokenId = TokenId(2);
const NUM_SPECIALS: usize = 3;

/// Result of tokenizing one string. `has_unk` flags characters outside the
/// supported alphabet, for which the round-trip guarantee is waived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: TokenSeq,
    pub has_unk: bool,
}

impl Vocabulary {
    /// Builds a vocabulary from complete file lines, reserved specials first.
    pub fn new(lines: Vec<String>) -> Result<Self, VocabError> {
        if lines.len() < NUM_SPECIALS {
            return Err(VocabError::TooFewEntries);
        }
        let mut lookup = HashMap::new();
        let mut alphabet = HashSet::new();
        let mut max_entry_bytes = 1;
        let mut seen: HashSet<&str> = HashSet::new();
        for (id, entry) in lines.iter().enumerate() {
            if entry.is_empty() {
                return Err(VocabError::EmptyEntry(id));
            }
            if !seen.insert(entry) {
                return Err(VocabError::DuplicateEntry(entry.clone()));
            }
            if id < NUM_SPECIALS {
                continue; // specials are never matched against input text
            }
            let mut chars = entry.chars();
            let first = chars.next().expect("non-empty entry");
            if chars.next().is_none() {
                alphabet.insert(first);
            } else if entry.chars().any(is_word_boundary) {
                return Err(VocabError::BoundaryInEntry(entry.clone()));
            }
            max_entry_bytes = max_entry_bytes.max(entry.len());
            lookup.insert(entry.clone(), TokenId(id as u32));
        }
        for entry in lines.iter().skip(NUM_SPECIALS) {
            if entry.chars().count() > 1 {
                if let Some(ch) = entry.chars().find(|c| !alphabet.contains(c)) {
                    return Err(VocabError::MissingCharEntry {
                        entry: entry.clone(),
                        ch,
                    });
                }
            }
        }
        Ok(Self {
            tokens: lines,
            lookup,
            alphabet,
            max_entry_bytes,
        })
    }

    /// Convenience constructor: default special markers plus the given entries.
    pub fn with_entries<I, S>(entries: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lines = vec![
            "<bos>".to_string(),
            "<eos>".to_string(),
            "<unk>".to_string(),
        ];
        lines.extend(entries.into_iter().map(Into::into));
        Self::new(lines)
    }

    /// Loads a vocabulary file: one token per line, line number = id.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let raw = std::fs::read_to_string(path)?;
        let mut lines: Vec<String> = raw.split('\n').map(str::to_string).collect();
        if lines.last().is_some_and(String::is_empty) {
            lines.pop(); // trailing newline
        }
        Self::new(lines)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        BOS_ID
    }

    pub fn eos(&self) -> TokenId {
        EOS_ID
    }

    pub fn unk(&self) -> TokenId {
        UNK_ID
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn contains(&self, entry: &str) -> bool {
        self.lookup.contains_key(entry)
    }

    /// Greedy longest-match tokenization, left to right within each word.
    /// Word-boundary characters always tokenize as their own single-character
    /// tokens, so tokens never cross boundaries. Characters outside the
    /// supported alphabet map to UNK.
    pub fn tokenize(&self, text: &str) -> Tokenized {
        let mut ids = TokenSeq::new();
        let mut has_unk = false;
        let mut word_start = 0;
        for (i, c) in text.char_indices() {
            if is_word_boundary(c) {
                self.tokenize_word(&text[word_start..i], &mut ids, &mut has_unk);
                word_start = i + c.len_utf8();
                let single = &text[i..word_start];
                match self.lookup.get(single) {
                    Some(&id) => ids.push(id),
                    None => {
                        ids.push(UNK_ID);
                        has_unk = true;
                    }
                }
            }
        }
        self.tokenize_word(&text[word_start..], &mut ids, &mut has_unk);
        Tokenized { ids, has_unk }
    }

    fn tokenize_word(&self, word: &str, ids: &mut TokenSeq, has_unk: &mut bool) {
        let mut pos = 0;
        while pos < word.len() {
            let rest = &word[pos..];
            let limit = rest.len().min(self.max_entry_bytes);
            let mut matched = None;
            for end in (1..=limit).rev() {
                if !rest.is_char_boundary(end) {
                    continue;
                }
                if let Some(&id) = self.lookup.get(&rest[..end]) {
                    matched = Some((id, end));
                    break;
                }
            }
            match matched {
                Some((id, end)) => {
                    ids.push(id);
                    pos += end;
                }
                None => {
                    ids.push(UNK_ID);
                    *has_unk = true;
                    pos += rest.chars().next().expect("non-empty rest").len_utf8();
                }
            }
        }
    }

    /// Concatenates the token strings. Inverse of [`Self::tokenize`] on
    /// UNK-free inputs.
    pub fn detokenize(&self, seq: &[TokenId]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in seq {
            let s = self.token_str(id).ok_or(VocabError::InvalidTokenId {
                id: id.0,
                size: self.len(),
            })?;
            out.push_str(s);
        }
        Ok(out)
    }
}
