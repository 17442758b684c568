//! Intermediate/final event protocol and stable-prefix splitting.
//!
//! ASR feeds the translator two kinds of events: *intermediates*, which a
//! later event may rewrite from the last finalized point, and *finals*, which
//! never change. The translator emits the same two kinds on its output side.
//!
//! Final text can end mid-word ("car" arriving before "pet"), so tokenizing it
//! eagerly would bake in a token split that the rest of the word invalidates.
//! [`split_stable_prefix`] separates the boundary-terminated prefix, whose
//! tokenization can no longer change, from the trailing fragment that must be
//! treated as intermediate input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether an event may still be rewritten or is committed forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// Unstable result; the next event replaces it from the last final point.
    Intermediate,
    /// Committed result; concatenation of finals is the session transcript.
    Final,
}

/// One transcription event from the ASR side.
///
/// JSONL wire form, one event per line:
/// `{"kind":"final","text":"hola ","seq_no":3,"timestamp_ms":120}`.
/// `timestamp_ms` is optional in replay logs and defaults to 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrEvent {
    pub kind: EventKind,
    /// Newly reported text since the current intermediate starting point.
    pub text: String,
    /// Strictly increasing within a session.
    pub seq_no: u64,
    #[serde(default)]
    pub timestamp_ms: u64,
}

impl AsrEvent {
    pub fn new(kind: EventKind, seq_no: u64, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
            seq_no,
            timestamp_ms: 0,
        }
    }

    pub fn final_event(seq_no: u64, text: impl Into<String>) -> Self {
        Self::new(EventKind::Final, seq_no, text)
    }

    pub fn intermediate_event(seq_no: u64, text: impl Into<String>) -> Self {
        Self::new(EventKind::Intermediate, seq_no, text)
    }
}

/// One translation event emitted by the engine.
///
/// Concatenating all `Final` texts of a session yields the committed
/// translation; an `Intermediate` text appended to that concatenation is the
/// full display state at the moment it was emitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationEvent {
    pub kind: EventKind,
    pub text: String,
    /// Source tokens consumed (current sentence) when this event was emitted.
    pub source_reads: usize,
}

/// Result of splitting raw input text at the last word boundary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceSplit {
    /// Longest prefix ending at a word boundary; possibly empty.
    pub stable: String,
    /// Remainder with no internal word boundary; possibly empty.
    pub unstable: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("accumulate_final requires a final event, got intermediate seq_no {0}")]
    ExpectedFinal(u64),
}

/// Characters that terminate a word: ASCII space and punctuation plus their
/// common Unicode variants. Tokens never span across these.
const BOUNDARY_PUNCT: &[char] = &[
    '.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '¿', '¡', '«', '»', '\u{2018}', '\u{2019}',
    '\u{201C}', '\u{201D}', '\u{2026}',
];

pub fn is_word_boundary(c: char) -> bool {
    c.is_ascii_whitespace() || BOUNDARY_PUNCT.contains(&c)
}

/// Splits `text` into the longest prefix ending at a word boundary and the
/// trailing fragment. `stable + unstable == text` always holds.
pub fn split_stable_prefix(text: &str) -> SourceSplit {
    let cut = text
        .char_indices()
        .filter(|&(_, c)| is_word_boundary(c))
        .map(|(i, c)| i + c.len_utf8())
        .next_back()
        .unwrap_or(0);
    SourceSplit {
        stable: text[..cut].to_string(),
        unstable: text[cut..].to_string(),
    }
}

/// Appends a final event's text to the session transcription buffer.
///
/// Rejects intermediate events: only finals accumulate.
pub fn accumulate_final(session_buffer: &str, event: &AsrEvent) -> Result<String, EventError> {
    if event.kind != EventKind::Final {
        return Err(EventError::ExpectedFinal(event.seq_no));
    }
    let mut out = String::with_capacity(session_buffer.len() + event.text.len());
    out.push_str(session_buffer);
    out.push_str(&event.text);
    Ok(out)
}

/// True iff the text, after trimming trailing whitespace, ends with a
/// sentence terminator. No abbreviation handling.
pub fn detect_sentence_end(text: &str) -> bool {
    matches!(text.trim_end().chars().last(), Some('.' | '?' | '!'))
}

/// A sentence-sized chunk of stabilized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceChunk {
    pub text: String,
    /// True when the chunk ends with a sentence terminator.
    pub terminated: bool,
}

/// Splits stabilized text into complete sentences plus an optional trailing
/// partial chunk. Whitespace following a terminator stays with the completed
/// sentence so the next one starts clean.
pub fn split_sentences(text: &str) -> Vec<SentenceChunk> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '?' | '!') {
            while let Some(&next) = chars.peek() {
                if next.is_ascii_whitespace() {
                    current.push(next);
                    chars.next();
                } else {
                    break;
                }
            }
            chunks.push(SentenceChunk {
                text: std::mem::take(&mut current),
                terminated: true,
            });
        }
    }
    if !current.is_empty() {
        chunks.push(SentenceChunk {
            text: current,
            terminated: false,
        });
    }
    chunks
}
