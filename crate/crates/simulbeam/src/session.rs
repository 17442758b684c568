//! Event loop driving a [`SearchState`] from ASR events to translation events.
//!
//! Final input text accumulates into the session transcript, but only its
//! boundary-terminated prefix is tokenized and fed to the model; the trailing
//! fragment joins the next event, so a word split across finals ("car" +
//! "pet ") is tokenized once, as a whole. Intermediate input (including that
//! trailing fragment) is decoded speculatively from a checkpoint and rewound,
//! so it influences only intermediate output, never finals. A sentence
//! terminator in stabilized text triggers the forced end-of-sentence write
//! loop and a fresh beam for the next sentence.

use crate::beam::{EngineConfig, EngineError, SearchState};
use crate::events::{
    accumulate_final, split_sentences, split_stable_prefix, AsrEvent, EventKind, TranslationEvent,
};
use crate::metrics::{CostCounters, LagTrace};
use crate::model::StreamingModel;
use crate::tokenizer::Vocabulary;

/// Everything recorded about one finalized sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    /// Stabilized source text fed for this sentence.
    pub source: String,
    /// Concatenated final translation text.
    pub translation: String,
    /// Word-level lag schedule of the final translation.
    pub lag: LagTrace,
}

/// One streaming translation session over a single ordered event stream.
pub struct StreamingSession<'a, M: StreamingModel> {
    model: &'a M,
    vocab: &'a Vocabulary,
    config: EngineConfig,
    search: SearchState<M::State>,
    counters: CostCounters,
    transcript: String,
    unstable: String,
    last_seq_no: Option<u64>,
    at_checkpoint: bool,
    sentence_source_text: String,
    sentence_final_text: String,
    /// (target words so far, source words so far) at each final emission.
    lag_records: Vec<(usize, usize)>,
    sentences: Vec<SentenceRecord>,
    session_final_text: String,
}

impl<'a, M: StreamingModel> StreamingSession<'a, M> {
    pub fn new(
        model: &'a M,
        vocab: &'a Vocabulary,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if vocab.len() != model.vocab_size() {
            return Err(EngineError::InvalidConfig(format!(
                "vocabulary size {} does not match model vocabulary size {}",
                vocab.len(),
                model.vocab_size()
            )));
        }
        let search = SearchState::new(model, config.clone());
        Ok(Self {
            model,
            vocab,
            config,
            search,
            counters: CostCounters::default(),
            transcript: String::new(),
            unstable: String::new(),
            last_seq_no: None,
            at_checkpoint: false,
            sentence_source_text: String::new(),
            sentence_final_text: String::new(),
            lag_records: Vec::new(),
            sentences: Vec::new(),
            session_final_text: String::new(),
        })
    }

    /// Processes one ASR event and returns the translation events it caused,
    /// finals first, then the trailing intermediate(s).
    pub fn process_event(
        &mut self,
        event: &AsrEvent,
    ) -> Result<Vec<TranslationEvent>, EngineError> {
        if let Some(last) = self.last_seq_no {
            if event.seq_no <= last {
                return Err(EngineError::OutOfOrderEvent {
                    last,
                    got: event.seq_no,
                });
            }
        }
        self.last_seq_no = Some(event.seq_no);
        match event.kind {
            EventKind::Final => self.process_final(event),
            EventKind::Intermediate => self.process_intermediate(event),
        }
    }

    fn process_final(&mut self, event: &AsrEvent) -> Result<Vec<TranslationEvent>, EngineError> {
        self.transcript = accumulate_final(&self.transcript, event)?;
        let pending = std::mem::take(&mut self.unstable) + &event.text;
        let split = split_stable_prefix(&pending);
        self.unstable = split.unstable;

        let mut out = Vec::new();
        for chunk in split_sentences(&split.stable) {
            self.feed_stable_text(&chunk.text)?;
            if chunk.terminated {
                self.finalize_current_sentence(&mut out)?;
            }
        }
        if let Some(final_event) = self.search.emit_final(self.vocab)? {
            self.note_final(&final_event);
            out.push(final_event);
        }
        out.push(self.search.emit_intermediate(self.vocab)?);
        self.search.checkpoint();
        self.at_checkpoint = true;

        if !self.unstable.is_empty() {
            let speculative = self.unstable.clone();
            out.push(self.decode_speculative(&speculative)?);
        }
        Ok(out)
    }

    fn process_intermediate(
        &mut self,
        event: &AsrEvent,
    ) -> Result<Vec<TranslationEvent>, EngineError> {
        // The intermediate replaces text from the last final point, so the
        // unfed fragment of finalized text belongs in front of it.
        let pending = self.unstable.clone() + &event.text;
        if pending.is_empty() {
            return Ok(vec![self.search.emit_intermediate(self.vocab)?]);
        }
        if !self.at_checkpoint {
            self.search.checkpoint();
            self.at_checkpoint = true;
        }
        Ok(vec![self.decode_speculative(&pending)?])
    }

    /// Flushes the session: any trailing fragment becomes final input and an
    /// unterminated last sentence is force-finalized as if EOS had arrived.
    pub fn finish(&mut self) -> Result<Vec<TranslationEvent>, EngineError> {
        let mut out = Vec::new();
        if !self.unstable.is_empty() {
            let text = std::mem::take(&mut self.unstable);
            self.feed_stable_text(&text)?;
        }
        if !self.search.source_tokens_read().is_empty() {
            self.finalize_current_sentence(&mut out)?;
        }
        Ok(out)
    }

    /// Tokenizes boundary-safe text and reads it token by token, expanding
    /// writers after every read.
    fn feed_stable_text(&mut self, text: &str) -> Result<(), EngineError> {
        for token in self.vocab.tokenize(text).ids {
            self.search
                .read_token(self.model, self.vocab, token, &mut self.counters)?;
            self.search
                .expand_writers(self.model, self.vocab, &mut self.counters)?;
            self.at_checkpoint = false;
        }
        self.sentence_source_text.push_str(text);
        Ok(())
    }

    fn finalize_current_sentence(
        &mut self,
        out: &mut Vec<TranslationEvent>,
    ) -> Result<(), EngineError> {
        self.search
            .read_token(self.model, self.vocab, self.vocab.eos(), &mut self.counters)?;
        let events = self
            .search
            .finalize_sentence(self.model, self.vocab, &mut self.counters)?;
        for event in events {
            self.note_final(&event);
            out.push(event);
        }
        self.complete_sentence();
        Ok(())
    }

    /// Decodes unstable text from the checkpoint, emits one intermediate, and
    /// rewinds, leaving the search state exactly as before.
    fn decode_speculative(&mut self, text: &str) -> Result<TranslationEvent, EngineError> {
        debug_assert!(self.at_checkpoint);
        for token in self.vocab.tokenize(text).ids {
            self.search
                .read_token(self.model, self.vocab, token, &mut self.counters)?;
            self.search
                .expand_writers(self.model, self.vocab, &mut self.counters)?;
        }
        let event = self.search.emit_intermediate(self.vocab)?;
        self.search.rewind()?;
        Ok(event)
    }

    fn note_final(&mut self, event: &TranslationEvent) {
        self.sentence_final_text.push_str(&event.text);
        self.session_final_text.push_str(&event.text);
        self.lag_records.push((
            count_words(&self.sentence_final_text),
            count_words(&self.sentence_source_text),
        ));
    }

    fn complete_sentence(&mut self) {
        let source = std::mem::take(&mut self.sentence_source_text);
        let translation = std::mem::take(&mut self.sentence_final_text);
        let records = std::mem::take(&mut self.lag_records);
        let source_len = count_words(&source);
        let target_len = count_words(&translation);
        // g(t) = source words read when target word t first appeared.
        let mut g = Vec::with_capacity(target_len);
        for t in 1..=target_len {
            let at = records
                .iter()
                .find(|(tgt, _)| *tgt >= t)
                .map(|&(_, src)| src)
                .unwrap_or(source_len);
            g.push(at.min(source_len));
        }
        self.sentences.push(SentenceRecord {
            source,
            translation,
            lag: LagTrace {
                g,
                source_len,
                target_len,
            },
        });
        self.search = SearchState::new(self.model, self.config.clone());
        self.at_checkpoint = false;
    }

    pub fn counters(&self) -> CostCounters {
        self.counters
    }

    /// Concatenation of all final translation events so far.
    pub fn final_text(&self) -> &str {
        &self.session_final_text
    }

    /// Concatenation of all final ASR texts so far.
    pub fn transcript(&self) -> &str {
        &self.transcript
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn search(&self) -> &SearchState<M::State> {
        &self.search
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.vocab
    }
}

fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}
