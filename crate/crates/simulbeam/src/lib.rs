//! Streaming beam-search decoding for simultaneous machine translation.
//!
//! A cascaded live-translation pipeline feeds the translator a stream of
//! transcription events that are either *intermediate* (may still be
//! rewritten) or *final* (committed). This crate implements the decoding side
//! of such a pipeline:
//!
//! * [`events`] — the intermediate/final event protocol, stable-prefix
//!   splitting of raw text, and sentence segmentation.
//! * [`tokenizer`] — a deterministic longest-match subword tokenizer whose
//!   tokens never cross word boundaries.
//! * [`model`] — the simultaneous-model interface (incremental encoder,
//!   stepwise decoder with a write probability, cloneable cached state) and a
//!   deterministic synthetic implementation used for testing and benchmarks.
//! * [`beam`] — the streaming beam-search state: grouped read/write
//!   expansion, common-prefix finalization, checkpoint/rewind, forced
//!   end-of-sentence writing.
//! * [`session`] — the event loop that drives a beam state from ASR events to
//!   translation events.
//! * [`baseline`] — non-streaming beam search plus the repeated-retranslation
//!   driver used as a comparison system.
//! * [`metrics`] — BLEU, word average lag, character flicker, and
//!   deterministic compute-cost counters.
//! * [`harness`] — replay/benchmark runner behind the CLI: consumes JSONL
//!   event logs or plain-text sentences and writes a metrics report.

pub mod baseline;
pub mod beam;
pub mod events;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod session;
pub mod tokenizer;

pub use baseline::{beam_search_full, NonStreamingModel, RetranslationSession};
pub use beam::{EngineConfig, EngineError, Hypothesis, SearchState};
pub use events::{AsrEvent, EventKind, SourceSplit, TranslationEvent};
pub use harness::{run, simulate_word_feed, InputSource, Mode, RunError, RunSpec};
pub use metrics::{CostCounters, DisplayTrace, LagTrace, MetricsReport, StepKind};
pub use model::{DecoderOutput, ModelError, ModelState, StreamingModel, SyntheticModel};
pub use session::{SentenceRecord, StreamingSession};
pub use tokenizer::{TokenId, TokenSeq, Vocabulary};
