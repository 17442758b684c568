//! Non-streaming beam search and the fake-streaming baseline that repeatedly
//! retranslates the growing sentence prefix on every event.

use std::cmp::Ordering;

use crate::beam::{EngineConfig, EngineError};
use crate::events::{split_sentences, AsrEvent, EventKind, TranslationEvent};
use crate::metrics::{CostCounters, LagTrace, StepKind};
use crate::model::{ModelError, StreamingModel};
use crate::session::SentenceRecord;
use crate::tokenizer::{TokenId, TokenSeq, Vocabulary};

/// A simultaneous model driven as a whole-sentence model: the encoder consumes
/// the full input (plus EOS) before any decoding, and the write probability is
/// never consulted, so decoding never interleaves reads.
pub struct NonStreamingModel<'a, M: StreamingModel> {
    model: &'a M,
    vocab: &'a Vocabulary,
}

impl<'a, M: StreamingModel> NonStreamingModel<'a, M> {
    pub fn new(model: &'a M, vocab: &'a Vocabulary) -> Self {
        Self { model, vocab }
    }

    fn encode_full(
        &self,
        input: &[TokenId],
        counters: &mut CostCounters,
    ) -> Result<M::State, ModelError> {
        let mut state = self.model.initial_state();
        for &token in input {
            state = self.model.encoder_append(&state, token)?;
            counters.record_step(StepKind::Encoder, 1);
        }
        state = self.model.encoder_append(&state, self.vocab.eos())?;
        counters.record_step(StepKind::Encoder, 1);
        Ok(state)
    }

    /// Classic beam search over the fully encoded input. Returns the best
    /// finished sequence (terminal EOS stripped).
    pub fn translate(
        &self,
        input: &[TokenId],
        k: usize,
        cap: usize,
        counters: &mut CostCounters,
    ) -> Result<TokenSeq, EngineError> {
        if input.is_empty() {
            return Err(EngineError::InvalidConfig(
                "beam_search_full requires a non-empty input".into(),
            ));
        }
        if k < 1 {
            return Err(EngineError::InvalidConfig("beam size must be >= 1".into()));
        }
        let encoded = self.encode_full(input, counters)?;
        let n = self.model.vocab_size();
        let eos = self.vocab.eos();
        let bos = self.vocab.bos();

        struct Entry<S> {
            tokens: TokenSeq,
            sum_log_prob: f64,
            state: S,
        }
        let score = |e: &Entry<M::State>| e.sum_log_prob / e.tokens.len().max(1) as f64;

        let mut live = vec![Entry {
            tokens: TokenSeq::new(),
            sum_log_prob: 0.0,
            state: encoded,
        }];
        let mut finished: Vec<Entry<M::State>> = Vec::new();

        while !live.is_empty() && finished.len() < k {
            let states: Vec<M::State> = live.iter().map(|e| e.state.clone()).collect();
            let lasts: Vec<TokenId> = live
                .iter()
                .map(|e| e.tokens.last().copied().unwrap_or(bos))
                .collect();
            let results = self.model.decoder_step_batched(&states, &lasts)?;
            counters.record_step(StepKind::Decoder, results.len());

            let mut candidates: Vec<Entry<M::State>> = Vec::new();
            for (entry, (output, fed_state)) in live.drain(..).zip(results) {
                for j in 0..n as u32 {
                    let token = TokenId(j);
                    let mut tokens = entry.tokens.clone();
                    tokens.push(token);
                    candidates.push(Entry {
                        sum_log_prob: entry.sum_log_prob + output.log_probs[token.index()],
                        state: fed_state.clone(),
                        tokens,
                    });
                }
            }
            candidates.sort_by(|a, b| score(b).partial_cmp(&score(a)).unwrap_or(Ordering::Equal));
            // Complete hypotheses are set aside only from the top-k band;
            // the beam refills with the first k incomplete ones.
            for (rank, cand) in candidates.into_iter().enumerate() {
                let complete = cand.tokens.last() == Some(&eos) || cand.tokens.len() >= cap;
                if complete {
                    if rank < k && finished.len() < k {
                        finished.push(cand);
                    }
                } else if live.len() < k {
                    live.push(cand);
                }
                if rank + 1 >= k && live.len() >= k {
                    break;
                }
            }
        }

        let mut best_idx = 0;
        for (i, entry) in finished.iter().enumerate().skip(1) {
            if score(entry) > score(&finished[best_idx]) {
                best_idx = i;
            }
        }
        let mut tokens = finished.swap_remove(best_idx).tokens;
        if tokens.last() == Some(&eos) {
            tokens.pop();
        }
        Ok(tokens)
    }
}

/// Non-streaming beam search over a fully encoded input sequence.
pub fn beam_search_full<M: StreamingModel>(
    model: &M,
    vocab: &Vocabulary,
    input: &[TokenId],
    k: usize,
    cap: usize,
    counters: &mut CostCounters,
) -> Result<TokenSeq, EngineError> {
    NonStreamingModel::new(model, vocab).translate(input, k, cap, counters)
}

/// Fake streaming: on every event the entire current sentence prefix is
/// retranslated from scratch and the display rewritten; only a sentence end
/// produces a final.
pub struct RetranslationSession<'a, M: StreamingModel> {
    model: &'a M,
    vocab: &'a Vocabulary,
    beam_size: usize,
    len_a: f64,
    len_b: f64,
    buffer: String,
    last_seq_no: Option<u64>,
    counters: CostCounters,
    decode_count: usize,
    sentences: Vec<SentenceRecord>,
    session_final_text: String,
}

impl<'a, M: StreamingModel> RetranslationSession<'a, M> {
    pub fn new(
        model: &'a M,
        vocab: &'a Vocabulary,
        config: &EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            model,
            vocab,
            beam_size: config.beam_size,
            len_a: config.len_a,
            len_b: config.len_b,
            buffer: String::new(),
            last_seq_no: None,
            counters: CostCounters::default(),
            decode_count: 0,
            sentences: Vec::new(),
            session_final_text: String::new(),
        })
    }

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
            EventKind::Intermediate => {
                let current = format!("{}{}", self.buffer, event.text);
                let (text, reads) = self.decode(&current)?;
                Ok(vec![TranslationEvent {
                    kind: EventKind::Intermediate,
                    text,
                    source_reads: reads,
                }])
            }
            EventKind::Final => {
                self.buffer.push_str(&event.text);
                let text = std::mem::take(&mut self.buffer);
                let mut out = Vec::new();
                for chunk in split_sentences(&text) {
                    if chunk.terminated {
                        out.push(self.finalize_sentence(&chunk.text)?);
                    } else {
                        let (translation, reads) = self.decode(&chunk.text)?;
                        self.buffer = chunk.text;
                        out.push(TranslationEvent {
                            kind: EventKind::Intermediate,
                            text: translation,
                            source_reads: reads,
                        });
                    }
                }
                if out.is_empty() {
                    out.push(TranslationEvent {
                        kind: EventKind::Intermediate,
                        text: String::new(),
                        source_reads: 0,
                    });
                }
                Ok(out)
            }
        }
    }

    /// Flushes an unterminated trailing sentence as final.
    pub fn finish(&mut self) -> Result<Vec<TranslationEvent>, EngineError> {
        if self.buffer.is_empty() {
            return Ok(Vec::new());
        }
        let text = std::mem::take(&mut self.buffer);
        Ok(vec![self.finalize_sentence(&text)?])
    }

    fn finalize_sentence(&mut self, source: &str) -> Result<TranslationEvent, EngineError> {
        let (translation, reads) = self.decode(source)?;
        self.session_final_text.push_str(&translation);
        let source_len = source.split_whitespace().count();
        let target_len = translation.split_whitespace().count();
        self.sentences.push(SentenceRecord {
            source: source.to_string(),
            translation: translation.clone(),
            // Retranslation only commits words at sentence end.
            lag: LagTrace {
                g: vec![source_len; target_len],
                source_len,
                target_len,
            },
        });
        Ok(TranslationEvent {
            kind: EventKind::Final,
            text: translation,
            source_reads: reads,
        })
    }

    fn decode(&mut self, text: &str) -> Result<(String, usize), EngineError> {
        let tokens = self.vocab.tokenize(text).ids;
        if tokens.is_empty() {
            return Ok((String::new(), 0));
        }
        self.decode_count += 1;
        let x = tokens.len() + 1; // input tokens including EOS
        let cap = (self.len_a * x as f64 + self.len_b).floor().max(0.0) as usize;
        let out = beam_search_full(
            self.model,
            self.vocab,
            &tokens,
            self.beam_size,
            cap,
            &mut self.counters,
        )?;
        Ok((self.vocab.detokenize(&out)?, x))
    }

    pub fn counters(&self) -> CostCounters {
        self.counters
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.sentences
    }

    pub fn final_text(&self) -> &str {
        &self.session_final_text
    }

    /// Number of full beam-search decodes performed so far.
    pub fn decode_count(&self) -> usize {
        self.decode_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SyntheticModel;

    fn model(n_letters: usize, seed: u64) -> SyntheticModel {
        let letters = ["a", "b", "c", "d", "e", "f"];
        let mut entries: Vec<&str> = letters[..n_letters].to_vec();
        entries.extend([" ", "."]);
        let vocab = Vocabulary::with_entries(entries).unwrap();
        SyntheticModel::new(vocab, seed, 1, 4.0).unwrap()
    }

    fn toks(m: &SyntheticModel, s: &str) -> TokenSeq {
        m.vocab().tokenize(s).ids
    }

    #[test]
    fn beam_one_is_greedy_argmax() {
        let m = model(4, 3);
        let input = toks(&m, "ab ba");
        let cap = 12;
        let mut counters = CostCounters::default();
        let result = beam_search_full(&m, m.vocab(), &input, 1, cap, &mut counters).unwrap();

        // Greedy oracle straight off the synthetic distribution.
        let reads = input.len() + 1;
        let mut written = TokenSeq::new();
        loop {
            if written.len() >= cap {
                break;
            }
            let dist = m.distribution(reads, &written);
            let mut best = 0usize;
            for (j, lp) in dist.log_probs.iter().enumerate() {
                if *lp > dist.log_probs[best] {
                    best = j;
                }
            }
            let token = TokenId(best as u32);
            written.push(token);
            if token == m.vocab().eos() {
                break;
            }
        }
        if written.last() == Some(&m.vocab().eos()) {
            written.pop();
        }
        assert_eq!(result, written);
    }

    #[test]
    fn wide_beam_matches_exhaustive_enumeration() {
        // Tiny instance: every candidate sequence fits in the beam.
        let m = model(2, 5);
        let n = m.vocab_size();
        let eos = m.vocab().eos();
        let input = toks(&m, "ab");
        let cap = 4;
        let reads = input.len() + 1;

        // Enumerate every sequence that ends with EOS or hits the cap.
        let mut best: Option<(TokenSeq, f64)> = None;
        let mut stack: Vec<(TokenSeq, f64)> = vec![(TokenSeq::new(), 0.0)];
        while let Some((tokens, sum)) = stack.pop() {
            let dist = m.distribution(reads, &tokens);
            for j in 0..n as u32 {
                let token = TokenId(j);
                let mut seq = tokens.clone();
                seq.push(token);
                let total = sum + dist.log_probs[token.index()];
                if token == eos || seq.len() >= cap {
                    let score = total / seq.len() as f64;
                    if best.as_ref().is_none_or(|(_, s)| score > *s) {
                        best = Some((seq, score));
                    }
                } else {
                    stack.push((seq, total));
                }
            }
        }
        let (mut expected, _) = best.unwrap();
        if expected.last() == Some(&eos) {
            expected.pop();
        }

        let mut counters = CostCounters::default();
        let result = beam_search_full(&m, m.vocab(), &input, 4096, cap, &mut counters).unwrap();
        assert_eq!(result, expected);
    }

    #[test]
    fn repeated_translation_is_deterministic() {
        let m = model(4, 9);
        let input = toks(&m, "abc de");
        let mut c1 = CostCounters::default();
        let mut c2 = CostCounters::default();
        let a = beam_search_full(&m, m.vocab(), &input, 3, 15, &mut c1).unwrap();
        let b = beam_search_full(&m, m.vocab(), &input, 3, 15, &mut c2).unwrap();
        assert_eq!(a, b);
        assert_eq!(c1, c2);
    }

    #[test]
    fn empty_input_is_rejected() {
        let m = model(2, 0);
        let mut counters = CostCounters::default();
        assert!(beam_search_full(&m, m.vocab(), &[], 1, 5, &mut counters).is_err());
    }

    #[test]
    fn single_full_sentence_event_is_one_decode() {
        let m = model(4, 7);
        let config = EngineConfig::default();
        let mut session = RetranslationSession::new(&m, m.vocab(), &config).unwrap();
        let events = session
            .process_event(&AsrEvent::final_event(0, "ab ba."))
            .unwrap();
        assert_eq!(session.decode_count(), 1);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Final);

        let tokens = toks(&m, "ab ba.");
        let cap = (1.5 * (tokens.len() + 1) as f64 + 5.0).floor() as usize;
        let mut counters = CostCounters::default();
        let direct = beam_search_full(&m, m.vocab(), &tokens, 1, cap, &mut counters).unwrap();
        assert_eq!(events[0].text, m.vocab().detokenize(&direct).unwrap());
    }

    #[test]
    fn word_by_word_finals_decode_every_event() {
        let m = model(4, 1);
        let config = EngineConfig::default();
        let mut session = RetranslationSession::new(&m, m.vocab(), &config).unwrap();
        let words = ["ab ", "ba ", "cd ", "dc."];
        for (i, w) in words.iter().enumerate() {
            session
                .process_event(&AsrEvent::final_event(i as u64, *w))
                .unwrap();
        }
        assert_eq!(session.decode_count(), words.len());
        assert_eq!(session.sentences().len(), 1);
    }

    #[test]
    fn identical_consecutive_intermediates_yield_identical_texts() {
        let m = model(4, 2);
        let config = EngineConfig::default();
        let mut session = RetranslationSession::new(&m, m.vocab(), &config).unwrap();
        let a = session
            .process_event(&AsrEvent::intermediate_event(0, "ab c"))
            .unwrap();
        let b = session
            .process_event(&AsrEvent::intermediate_event(1, "ab c"))
            .unwrap();
        assert_eq!(a[0].text, b[0].text);
    }

    #[test]
    fn finish_flushes_partial_sentence_as_final() {
        let m = model(4, 2);
        let config = EngineConfig::default();
        let mut session = RetranslationSession::new(&m, m.vocab(), &config).unwrap();
        session
            .process_event(&AsrEvent::final_event(0, "ab ba"))
            .unwrap();
        let events = session.finish().unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Final);
        assert_eq!(session.sentences().len(), 1);
    }
}
