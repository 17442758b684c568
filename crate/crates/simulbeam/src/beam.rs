//! Streaming beam-search state.
//!
//! The conflict between beam search and simultaneous decoding is that every
//! hypothesis could have read and written a different number of tokens. The
//! engine resolves it by keeping all live hypotheses synchronized on reads:
//! hypotheses classified as WRITE keep expanding, in a loop, until only
//! hypotheses that want to READ remain, then one read is performed for all of
//! them at once.
//!
//! Output is emitted on two levels. The longest common token prefix of the
//! beam can never change again, so its growth is emitted as *final* events;
//! the best hypothesis's remainder is emitted as an *intermediate* preview.
//! Checkpoint/rewind snapshots the whole state so speculative decoding of
//! unstable input leaves no trace.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventKind, TranslationEvent};
use crate::metrics::{CostCounters, StepKind};
use crate::model::{DecoderOutput, ModelError, StreamingModel};
use crate::tokenizer::{TokenId, TokenSeq, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Event(#[from] crate::events::EventError),
    #[error("cannot read source tokens after the sentence EOS was consumed")]
    ReadAfterEos,
    #[error("finalize_sentence requires the input EOS to have been read")]
    FinalizeBeforeEos,
    #[error("rewind requires an existing checkpoint")]
    NoCheckpoint,
    #[error("event seq_no {got} arrived after {last}; events must be in order")]
    OutOfOrderEvent { last: u64, got: u64 },
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
}

/// Decoding knobs. JSON form:
/// `{"beam_size":2,"write_threshold":0.5,"len_a":1.5,"len_b":5.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    #[serde(default = "default_beam_size")]
    pub beam_size: usize,
    /// A hypothesis writes when the model's write probability reaches this.
    #[serde(default = "default_write_threshold")]
    pub write_threshold: f64,
    /// Output length cap coefficients: at most `⌊len_a·x + len_b⌋` output
    /// tokens for `x` input tokens read.
    #[serde(default = "default_len_a")]
    pub len_a: f64,
    #[serde(default = "default_len_b")]
    pub len_b: f64,
    /// Optional limit on expansions per hypothesis per step; `None` expands
    /// by the full vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion_cap: Option<usize>,
}

fn default_beam_size() -> usize {
    1
}
fn default_write_threshold() -> f64 {
    0.5
}
fn default_len_a() -> f64 {
    1.5
}
fn default_len_b() -> f64 {
    5.0
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            beam_size: default_beam_size(),
            write_threshold: default_write_threshold(),
            len_a: default_len_a(),
            len_b: default_len_b(),
            expansion_cap: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.beam_size < 1 {
            return Err(EngineError::InvalidConfig("beam_size must be >= 1".into()));
        }
        if !self.write_threshold.is_finite() {
            return Err(EngineError::InvalidConfig(
                "write_threshold must be finite".into(),
            ));
        }
        if self.len_a.is_nan() || self.len_a < 0.0 || self.len_b.is_nan() || self.len_b < 0.0 {
            return Err(EngineError::InvalidConfig(
                "len_a and len_b must be non-negative".into(),
            ));
        }
        if self.expansion_cap == Some(0) {
            return Err(EngineError::InvalidConfig(
                "expansion_cap must be >= 1 when set".into(),
            ));
        }
        Ok(())
    }
}

/// Cached decoder evaluation for a hypothesis at its current read count.
#[derive(Debug, Clone, PartialEq)]
struct StepEval<S> {
    output: DecoderOutput,
    /// Model state after feeding this hypothesis's last token.
    fed_state: S,
}

/// One beam entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<S> {
    /// Written output tokens, BOS excluded.
    pub tokens: TokenSeq,
    /// Sum of log probabilities of the written tokens.
    pub sum_log_prob: f64,
    /// Source tokens read; equal across all live hypotheses.
    pub reads: usize,
    /// Set once the hypothesis emitted EOS or hit the output-length cap.
    pub finished: bool,
    state: S,
    eval: Option<StepEval<S>>,
}

impl<S> Hypothesis<S> {
    /// Length-normalized sequence score. The write probability plays no part.
    pub fn score(&self) -> f64 {
        self.sum_log_prob / self.tokens.len().max(1) as f64
    }

    pub fn state(&self) -> &S {
        &self.state
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot<S> {
    beam: Vec<Hypothesis<S>>,
    emitted_final_tokens: TokenSeq,
    source_tokens_read: TokenSeq,
    eos_read: bool,
}

/// Full decoding state for one sentence: the beam, emission bookkeeping, and
/// an optional checkpoint of all three.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState<S> {
    config: EngineConfig,
    beam: Vec<Hypothesis<S>>,
    emitted_final_tokens: TokenSeq,
    source_tokens_read: TokenSeq,
    eos_read: bool,
    checkpoint: Option<Box<Snapshot<S>>>,
}

impl<S: Clone + PartialEq + std::fmt::Debug> SearchState<S> {
    pub fn new<M>(model: &M, config: EngineConfig) -> Self
    where
        M: StreamingModel<State = S>,
    {
        let beam = vec![Hypothesis {
            tokens: TokenSeq::new(),
            sum_log_prob: 0.0,
            reads: 0,
            finished: false,
            state: model.initial_state(),
            eval: None,
        }];
        Self {
            config,
            beam,
            emitted_final_tokens: TokenSeq::new(),
            source_tokens_read: TokenSeq::new(),
            eos_read: false,
            checkpoint: None,
        }
    }

    pub fn beam(&self) -> &[Hypothesis<S>] {
        &self.beam
    }

    pub fn emitted_final_tokens(&self) -> &[TokenId] {
        &self.emitted_final_tokens
    }

    pub fn source_tokens_read(&self) -> &[TokenId] {
        &self.source_tokens_read
    }

    pub fn eos_read(&self) -> bool {
        self.eos_read
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn has_checkpoint(&self) -> bool {
        self.checkpoint.is_some()
    }

    /// Output-length cap for the current number of input tokens read.
    pub fn current_cap(&self) -> usize {
        let x = self.source_tokens_read.len() as f64;
        (self.config.len_a * x + self.config.len_b).floor().max(0.0) as usize
    }

    /// The best-scoring hypothesis; earliest beam slot wins ties.
    pub fn best_hypothesis(&self) -> &Hypothesis<S> {
        let mut best = &self.beam[0];
        for hyp in &self.beam[1..] {
            if hyp.score() > best.score() {
                best = hyp;
            }
        }
        best
    }

    /// Reads one source token into every live hypothesis at once, keeping the
    /// beam synchronized on reads.
    pub fn read_token<M>(
        &mut self,
        model: &M,
        vocab: &Vocabulary,
        token: TokenId,
        counters: &mut CostCounters,
    ) -> Result<(), EngineError>
    where
        M: StreamingModel<State = S>,
    {
        if self.eos_read {
            return Err(EngineError::ReadAfterEos);
        }
        if token.index() >= model.vocab_size() {
            return Err(ModelError::InvalidToken {
                id: token.0,
                size: model.vocab_size(),
            }
            .into());
        }
        for hyp in self.beam.iter_mut().filter(|h| !h.finished) {
            hyp.state = model.encoder_append(&hyp.state, token)?;
            hyp.reads += 1;
            hyp.eval = None;
        }
        self.source_tokens_read.push(token);
        if token == vocab.eos() {
            self.eos_read = true;
        }
        // All live hypotheses read simultaneously, so the shared encoder
        // advances by one step regardless of beam size.
        counters.record_step(StepKind::Encoder, 1);
        self.debug_check();
        Ok(())
    }

    /// Expands hypotheses classified as WRITE, in a loop, until every kept
    /// live hypothesis wants to READ or is finished. Hypotheses that want to
    /// read keep their cached decoder output.
    pub fn expand_writers<M>(
        &mut self,
        model: &M,
        vocab: &Vocabulary,
        counters: &mut CostCounters,
    ) -> Result<(), EngineError>
    where
        M: StreamingModel<State = S>,
    {
        self.expansion_loop(model, vocab, counters, false)
    }

    /// After the input EOS, ignores the write probability and keeps writing
    /// until `beam_size` hypotheses produced EOS or hit the length cap, then
    /// finalizes the whole top hypothesis.
    pub fn finalize_sentence<M>(
        &mut self,
        model: &M,
        vocab: &Vocabulary,
        counters: &mut CostCounters,
    ) -> Result<Vec<TranslationEvent>, EngineError>
    where
        M: StreamingModel<State = S>,
    {
        if !self.eos_read {
            return Err(EngineError::FinalizeBeforeEos);
        }
        self.expansion_loop(model, vocab, counters, true)?;
        let mut sentence = self.best_hypothesis().tokens.clone();
        strip_trailing_eos(&mut sentence, vocab.eos());
        let mut events = Vec::new();
        if sentence.len() > self.emitted_final_tokens.len() {
            let text = vocab.detokenize(&sentence[self.emitted_final_tokens.len()..])?;
            self.emitted_final_tokens = sentence;
            events.push(TranslationEvent {
                kind: EventKind::Final,
                text,
                source_reads: self.source_tokens_read.len(),
            });
        }
        self.debug_check();
        Ok(events)
    }

    fn expansion_loop<M>(
        &mut self,
        model: &M,
        vocab: &Vocabulary,
        counters: &mut CostCounters,
        forced: bool,
    ) -> Result<(), EngineError>
    where
        M: StreamingModel<State = S>,
    {
        if self.source_tokens_read.is_empty() {
            return Ok(()); // fresh beam: nothing to condition a decoder step on
        }
        let n = model.vocab_size();
        let eos = vocab.eos();
        loop {
            // Hypotheses at the length cap are finished; never evaluated again.
            let cap = self.current_cap();
            for hyp in &mut self.beam {
                if !hyp.finished && hyp.tokens.len() >= cap {
                    hyp.finished = true;
                    hyp.eval = None;
                }
            }
            if self.beam.iter().all(|h| h.finished) {
                break;
            }
            self.ensure_evals(model, vocab, counters)?;
            let wants_write = |h: &Hypothesis<S>| {
                !h.finished
                    && (forced
                        || h.eval.as_ref().expect("evaluated").output.write_prob
                            >= self.config.write_threshold)
            };
            if !self.beam.iter().any(wants_write) {
                break;
            }

            // Hypotheses that want to read and finished ones compete in the
            // same top-k selection as the fresh expansions; existing entries
            // come first so ties resolve to the earlier-created hypothesis.
            let mut pool: Vec<Hypothesis<S>> = Vec::new();
            let mut children: Vec<Hypothesis<S>> = Vec::new();
            for mut hyp in std::mem::take(&mut self.beam) {
                if !wants_write(&hyp) {
                    pool.push(hyp);
                    continue;
                }
                let eval = hyp.eval.take().expect("evaluated");
                for token in candidate_tokens(
                    &eval.output,
                    n,
                    eos,
                    self.eos_read,
                    self.config.expansion_cap,
                ) {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(token);
                    let finished = token == eos || tokens.len() >= cap;
                    children.push(Hypothesis {
                        sum_log_prob: hyp.sum_log_prob + eval.output.log_probs[token.index()],
                        reads: hyp.reads,
                        finished,
                        state: eval.fed_state.clone(),
                        eval: None,
                        tokens,
                    });
                }
            }
            pool.extend(children);
            pool.sort_by(|a, b| b.score().partial_cmp(&a.score()).unwrap_or(Ordering::Equal));
            pool.truncate(self.config.beam_size);
            self.beam = pool;
        }
        self.debug_check();
        Ok(())
    }

    /// Batch-evaluates every live hypothesis that lacks a cached decoder
    /// output at the current read count.
    fn ensure_evals<M>(
        &mut self,
        model: &M,
        vocab: &Vocabulary,
        counters: &mut CostCounters,
    ) -> Result<(), EngineError>
    where
        M: StreamingModel<State = S>,
    {
        let pending: Vec<usize> = self
            .beam
            .iter()
            .enumerate()
            .filter(|(_, h)| !h.finished && h.eval.is_none())
            .map(|(i, _)| i)
            .collect();
        if pending.is_empty() {
            return Ok(());
        }
        let states: Vec<S> = pending
            .iter()
            .map(|&i| self.beam[i].state.clone())
            .collect();
        let lasts: Vec<TokenId> = pending
            .iter()
            .map(|&i| self.beam[i].tokens.last().copied().unwrap_or(vocab.bos()))
            .collect();
        let results = model.decoder_step_batched(&states, &lasts)?;
        counters.record_step(StepKind::Decoder, results.len());
        for (&i, (output, fed_state)) in pending.iter().zip(results) {
            self.beam[i].eval = Some(StepEval { output, fed_state });
        }
        Ok(())
    }

    /// Emits the growth of the beam's common token prefix as a final event,
    /// if it extends what was already emitted.
    pub fn emit_final(
        &mut self,
        vocab: &Vocabulary,
    ) -> Result<Option<TranslationEvent>, EngineError> {
        let mut prefix_len = self.beam[0].tokens.len();
        for hyp in &self.beam[1..] {
            let shared = self.beam[0]
                .tokens
                .iter()
                .zip(&hyp.tokens)
                .take_while(|(a, b)| a == b)
                .count();
            prefix_len = prefix_len.min(shared);
        }
        let mut prefix = self.beam[0].tokens[..prefix_len].to_vec();
        strip_trailing_eos(&mut prefix, vocab.eos());
        if prefix.len() <= self.emitted_final_tokens.len() {
            return Ok(None);
        }
        let text = vocab.detokenize(&prefix[self.emitted_final_tokens.len()..])?;
        self.emitted_final_tokens = prefix;
        self.debug_check();
        Ok(Some(TranslationEvent {
            kind: EventKind::Final,
            text,
            source_reads: self.source_tokens_read.len(),
        }))
    }

    /// Emits the best hypothesis's suffix beyond the finalized prefix as an
    /// intermediate preview.
    pub fn emit_intermediate(&self, vocab: &Vocabulary) -> Result<TranslationEvent, EngineError> {
        let best = self.best_hypothesis();
        let mut suffix =
            best.tokens[self.emitted_final_tokens.len().min(best.tokens.len())..].to_vec();
        strip_trailing_eos(&mut suffix, vocab.eos());
        Ok(TranslationEvent {
            kind: EventKind::Intermediate,
            text: vocab.detokenize(&suffix)?,
            source_reads: self.source_tokens_read.len(),
        })
    }

    /// Stores a deep, independent copy of the current beam and emission
    /// bookkeeping. Overwrites any previous checkpoint.
    pub fn checkpoint(&mut self) {
        self.checkpoint = Some(Box::new(Snapshot {
            beam: self.beam.clone(),
            emitted_final_tokens: self.emitted_final_tokens.clone(),
            source_tokens_read: self.source_tokens_read.clone(),
            eos_read: self.eos_read,
        }));
    }

    /// Restores the last checkpoint exactly. The checkpoint persists, so a
    /// second rewind restores the same snapshot.
    pub fn rewind(&mut self) -> Result<(), EngineError> {
        let snap = self.checkpoint.as_ref().ok_or(EngineError::NoCheckpoint)?;
        self.beam = snap.beam.clone();
        self.emitted_final_tokens = snap.emitted_final_tokens.clone();
        self.source_tokens_read = snap.source_tokens_read.clone();
        self.eos_read = snap.eos_read;
        self.debug_check();
        Ok(())
    }

    /// Structural invariants; checked after every mutating operation in debug
    /// builds and directly by the test suites.
    pub fn check_invariants(&self, vocab: &Vocabulary) -> Result<(), String> {
        if self.beam.is_empty() || self.beam.len() > self.config.beam_size {
            return Err(format!(
                "beam holds {} hypotheses for k = {}",
                self.beam.len(),
                self.config.beam_size
            ));
        }
        let reads = self.source_tokens_read.len();
        for (i, hyp) in self.beam.iter().enumerate() {
            if !hyp.finished && hyp.reads != reads {
                return Err(format!(
                    "live hypothesis {i} has reads {} but the group read {reads}",
                    hyp.reads
                ));
            }
            if hyp.sum_log_prob > 1e-12 {
                return Err(format!(
                    "hypothesis {i} has positive sum_log_prob {}",
                    hyp.sum_log_prob
                ));
            }
            // Finished non-top hypotheses may diverge after the sentence-end
            // commit; the prefix property is over live hypotheses.
            if !hyp.finished && !hyp.tokens.starts_with(&self.emitted_final_tokens) {
                return Err(format!(
                    "emitted final tokens are not a prefix of live hypothesis {i}"
                ));
            }
            let eos = vocab.eos();
            if !self.eos_read && hyp.tokens.contains(&eos) {
                return Err(format!(
                    "hypothesis {i} contains EOS before the input EOS was read"
                ));
            }
            if let Some(pos) = hyp.tokens.iter().position(|&t| t == eos) {
                if pos + 1 != hyp.tokens.len() {
                    return Err(format!("hypothesis {i} has EOS in a non-terminal position"));
                }
            }
        }
        Ok(())
    }

    #[cfg(debug_assertions)]
    fn debug_check(&self) {
        let reads = self.source_tokens_read.len();
        for hyp in &self.beam {
            debug_assert!(
                hyp.finished || hyp.reads == reads,
                "read synchrony violated"
            );
            debug_assert!(
                hyp.finished || hyp.tokens.starts_with(&self.emitted_final_tokens),
                "finalized tokens must prefix every live hypothesis"
            );
        }
    }

    #[cfg(not(debug_assertions))]
    fn debug_check(&self) {}
}

fn strip_trailing_eos(tokens: &mut TokenSeq, eos: TokenId) {
    if tokens.last() == Some(&eos) {
        tokens.pop();
    }
}

/// Token ids a writer expands by, in deterministic (ascending id) order. EOS
/// is masked out (log-probability treated as -inf) until the input EOS was
/// read; `expansion_cap` keeps only the most probable ids.
fn candidate_tokens(
    output: &DecoderOutput,
    n: usize,
    eos: TokenId,
    eos_allowed: bool,
    expansion_cap: Option<usize>,
) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..n as u32)
        .map(TokenId)
        .filter(|&t| eos_allowed || t != eos)
        .collect();
    if let Some(cap) = expansion_cap {
        if cap < ids.len() {
            ids.sort_by(|a, b| {
                output.log_probs[b.index()]
                    .partial_cmp(&output.log_probs[a.index()])
                    .unwrap_or(Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            ids.truncate(cap);
            ids.sort_unstable_by_key(|t| t.0);
        }
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SyntheticModel;

    fn setup(wait_k: usize, beam: usize) -> (SyntheticModel, EngineConfig) {
        let vocab = Vocabulary::with_entries(["a", "b", "c", "d", " ", "."]).unwrap();
        let model = SyntheticModel::new(vocab, 11, wait_k, 4.0).unwrap();
        let config = EngineConfig {
            beam_size: beam,
            ..EngineConfig::default()
        };
        (model, config)
    }

    fn tok(model: &SyntheticModel, s: &str) -> TokenId {
        model.vocab().tokenize(s).ids[0]
    }

    fn hypothesis(tokens: &[u32], sum_log_prob: f64, reads: usize) -> Hypothesis<ModelStateStub> {
        Hypothesis {
            tokens: tokens.iter().map(|&t| TokenId(t)).collect(),
            sum_log_prob,
            reads,
            finished: false,
            state: ModelStateStub,
            eval: None,
        }
    }

    #[derive(Debug, Clone, PartialEq)]
    struct ModelStateStub;

    #[test]
    fn score_is_length_normalized() {
        let h = hypothesis(&[5, 6], -3.0, 0);
        assert!((h.score() - (-1.5)).abs() < 1e-12);
        let empty = hypothesis(&[], 0.0, 0);
        assert_eq!(empty.score(), 0.0);
        let shorter = hypothesis(&[5, 6], -3.0, 0);
        let longer = hypothesis(&[5, 6, 7], -3.0, 0);
        assert!(longer.score() > shorter.score());
    }

    #[test]
    fn fresh_read_sets_all_reads_to_one() {
        let (model, config) = setup(1, 3);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        state
            .read_token(&model, model.vocab(), tok(&model, "a"), &mut counters)
            .unwrap();
        assert!(state.beam().iter().all(|h| h.reads == 1));
        assert_eq!(counters.encoder_steps, 1);
    }

    #[test]
    fn read_rejects_out_of_range_token() {
        let (model, config) = setup(1, 1);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        let bad = TokenId(model.vocab_size() as u32);
        assert!(state
            .read_token(&model, model.vocab(), bad, &mut counters)
            .is_err());
    }

    #[test]
    fn read_after_eos_is_rejected() {
        let (model, config) = setup(1, 1);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        state
            .read_token(&model, model.vocab(), model.vocab().eos(), &mut counters)
            .unwrap();
        assert!(matches!(
            state.read_token(&model, model.vocab(), tok(&model, "a"), &mut counters),
            Err(EngineError::ReadAfterEos)
        ));
    }

    #[test]
    fn expand_with_only_readers_caches_outputs_and_keeps_beam() {
        // wait_k large: after one read everything wants more input.
        let (model, config) = setup(4, 2);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        state
            .read_token(&model, model.vocab(), tok(&model, "a"), &mut counters)
            .unwrap();
        let tokens_before: Vec<TokenSeq> = state.beam().iter().map(|h| h.tokens.clone()).collect();
        state
            .expand_writers(&model, model.vocab(), &mut counters)
            .unwrap();
        let tokens_after: Vec<TokenSeq> = state.beam().iter().map(|h| h.tokens.clone()).collect();
        assert_eq!(tokens_before, tokens_after);
        assert!(state.beam().iter().all(|h| h.eval.is_some()));
        assert_eq!(counters.decoder_steps, 1);
    }

    #[test]
    fn wait_one_model_writes_once_per_read_in_steady_state() {
        let (model, config) = setup(1, 1);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        let a = tok(&model, "a");
        let mut written_after = Vec::new();
        for _ in 0..5 {
            state
                .read_token(&model, model.vocab(), a, &mut counters)
                .unwrap();
            state
                .expand_writers(&model, model.vocab(), &mut counters)
                .unwrap();
            written_after.push(state.best_hypothesis().tokens.len());
        }
        assert_eq!(written_after, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn beam_one_cost_is_linear_with_small_constant() {
        // Word-by-word feed of T tokens at beam 1: decoder steps stay within
        // (len_a + 1)·T and the shared encoder advances exactly once per token.
        for wait_k in 1..=3usize {
            let (model, config) = setup(wait_k, 1);
            let len_a = config.len_a;
            let mut state = SearchState::new(&model, config);
            let mut counters = CostCounters::default();
            let a = tok(&model, "a");
            let words = 19usize; // plus EOS: 20 tokens total
            for _ in 0..words {
                state
                    .read_token(&model, model.vocab(), a, &mut counters)
                    .unwrap();
                state
                    .expand_writers(&model, model.vocab(), &mut counters)
                    .unwrap();
            }
            state
                .read_token(&model, model.vocab(), model.vocab().eos(), &mut counters)
                .unwrap();
            state
                .finalize_sentence(&model, model.vocab(), &mut counters)
                .unwrap();
            let tokens = (words + 1) as u64;
            assert_eq!(counters.encoder_steps, tokens);
            let bound = ((len_a + 1.0) * tokens as f64) as u64;
            assert!(
                counters.decoder_steps <= bound,
                "wait_k {wait_k}: {} decoder steps > {bound}",
                counters.decoder_steps
            );
        }
    }

    #[test]
    fn emit_final_of_singleton_beam_is_the_whole_hypothesis() {
        let (model, config) = setup(1, 1);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        state
            .read_token(&model, model.vocab(), tok(&model, "a"), &mut counters)
            .unwrap();
        state
            .read_token(&model, model.vocab(), tok(&model, "b"), &mut counters)
            .unwrap();
        state
            .expand_writers(&model, model.vocab(), &mut counters)
            .unwrap();
        let written = state.best_hypothesis().tokens.clone();
        assert!(!written.is_empty());
        let event = state.emit_final(model.vocab()).unwrap().unwrap();
        assert_eq!(state.emitted_final_tokens(), written.as_slice());
        assert_eq!(event.text, model.vocab().detokenize(&written).unwrap());
        // Nothing new: no event.
        assert!(state.emit_final(model.vocab()).unwrap().is_none());
    }

    #[test]
    fn emit_final_uses_the_common_prefix() {
        let (model, config) = setup(1, 2);
        let mut state = SearchState::new(&model, config);
        state.beam = vec![
            Hypothesis {
                tokens: vec![TokenId(3), TokenId(4), TokenId(5)],
                sum_log_prob: -1.0,
                reads: 0,
                finished: false,
                state: model.initial_state(),
                eval: None,
            },
            Hypothesis {
                tokens: vec![TokenId(3), TokenId(4), TokenId(6)],
                sum_log_prob: -2.0,
                reads: 0,
                finished: false,
                state: model.initial_state(),
                eval: None,
            },
        ];
        let event = state.emit_final(model.vocab()).unwrap().unwrap();
        assert_eq!(state.emitted_final_tokens(), &[TokenId(3), TokenId(4)]);
        assert_eq!(
            event.text,
            model.vocab().detokenize(&[TokenId(3), TokenId(4)]).unwrap()
        );
    }

    #[test]
    fn emit_intermediate_is_the_best_suffix_with_insertion_order_ties() {
        let (model, config) = setup(1, 2);
        let mut state = SearchState::new(&model, config);
        state.beam = vec![
            Hypothesis {
                tokens: vec![TokenId(3), TokenId(4), TokenId(5)],
                sum_log_prob: -3.0,
                reads: 0,
                finished: false,
                state: model.initial_state(),
                eval: None,
            },
            Hypothesis {
                tokens: vec![TokenId(3), TokenId(6), TokenId(7)],
                sum_log_prob: -3.0,
                reads: 0,
                finished: false,
                state: model.initial_state(),
                eval: None,
            },
        ];
        state.emitted_final_tokens = vec![TokenId(3)];
        let event = state.emit_intermediate(model.vocab()).unwrap();
        // Tie on score: the first beam slot wins.
        assert_eq!(
            event.text,
            model.vocab().detokenize(&[TokenId(4), TokenId(5)]).unwrap()
        );

        state.emitted_final_tokens = state.beam[0].tokens.clone();
        let event = state.emit_intermediate(model.vocab()).unwrap();
        assert_eq!(event.text, "");
    }

    #[test]
    fn checkpoint_rewind_restores_exactly() {
        let (model, config) = setup(1, 2);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        state
            .read_token(&model, model.vocab(), tok(&model, "a"), &mut counters)
            .unwrap();
        state
            .expand_writers(&model, model.vocab(), &mut counters)
            .unwrap();
        state.checkpoint();
        let saved = state.clone();

        // Immediate rewind is the identity.
        state.rewind().unwrap();
        assert_eq!(state, saved);

        // Speculate, rewind, and the snapshot is back; rewinding twice
        // restores the same snapshot.
        state
            .read_token(&model, model.vocab(), tok(&model, "b"), &mut counters)
            .unwrap();
        state
            .expand_writers(&model, model.vocab(), &mut counters)
            .unwrap();
        assert_ne!(state, saved);
        state.rewind().unwrap();
        assert_eq!(state, saved);
        state.rewind().unwrap();
        assert_eq!(state, saved);
    }

    #[test]
    fn rewind_without_checkpoint_errors() {
        let (model, config) = setup(1, 1);
        let mut state = SearchState::new(&model, config);
        assert!(matches!(state.rewind(), Err(EngineError::NoCheckpoint)));
    }

    #[test]
    fn cap_arithmetic() {
        let (model, _) = setup(1, 1);
        let config = EngineConfig {
            len_a: 1.5,
            len_b: 5.0,
            ..EngineConfig::default()
        };
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        for _ in 0..10 {
            state
                .read_token(&model, model.vocab(), tok(&model, "a"), &mut counters)
                .unwrap();
        }
        assert_eq!(state.current_cap(), 20);
    }

    #[test]
    fn finalize_requires_eos() {
        let (model, config) = setup(1, 1);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        state
            .read_token(&model, model.vocab(), tok(&model, "a"), &mut counters)
            .unwrap();
        assert!(matches!(
            state.finalize_sentence(&model, model.vocab(), &mut counters),
            Err(EngineError::FinalizeBeforeEos)
        ));
    }

    #[test]
    fn no_eos_is_written_before_input_eos() {
        let (model, config) = setup(0, 3);
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        for s in ["a", "b", "c", "d"] {
            state
                .read_token(&model, model.vocab(), tok(&model, s), &mut counters)
                .unwrap();
            state
                .expand_writers(&model, model.vocab(), &mut counters)
                .unwrap();
            state.check_invariants(model.vocab()).unwrap();
        }
        let eos = model.vocab().eos();
        assert!(state.beam().iter().all(|h| !h.tokens.contains(&eos)));
    }

    #[test]
    fn finalize_emits_the_top_hypothesis_and_respects_the_cap() {
        let (model, config) = setup(1, 2);
        let model = model.suppress_eos();
        let mut state = SearchState::new(&model, config);
        let mut counters = CostCounters::default();
        for s in ["a", "b"] {
            state
                .read_token(&model, model.vocab(), tok(&model, s), &mut counters)
                .unwrap();
            state
                .expand_writers(&model, model.vocab(), &mut counters)
                .unwrap();
        }
        state
            .read_token(&model, model.vocab(), model.vocab().eos(), &mut counters)
            .unwrap();
        let events = state
            .finalize_sentence(&model, model.vocab(), &mut counters)
            .unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Final);
        // Never-EOS model: output length is exactly the cap.
        assert_eq!(state.emitted_final_tokens().len(), state.current_cap());
        assert!(state.beam().iter().all(|h| h.finished));
    }

    #[test]
    fn expansion_cap_is_deterministic_and_keeps_invariants() {
        let (model, config) = setup(0, 3);
        let capped = EngineConfig {
            expansion_cap: Some(2),
            ..config
        };
        let run = || {
            let mut state = SearchState::new(&model, capped.clone());
            let mut counters = CostCounters::default();
            for s in ["a", "b", "c", "d"] {
                state
                    .read_token(&model, model.vocab(), tok(&model, s), &mut counters)
                    .unwrap();
                state
                    .expand_writers(&model, model.vocab(), &mut counters)
                    .unwrap();
                state.check_invariants(model.vocab()).unwrap();
            }
            (state, counters)
        };
        let (state_a, counters_a) = run();
        let (state_b, counters_b) = run();
        assert_eq!(state_a, state_b);
        assert_eq!(counters_a, counters_b);
        assert!(!state_a.best_hypothesis().tokens.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(EngineConfig::default().validate().is_ok());
        let bad = EngineConfig {
            beam_size: 0,
            ..EngineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EngineConfig {
            len_a: -1.0,
            ..EngineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: EngineConfig = serde_json::from_str(r#"{"beam_size":3}"#).unwrap();
        assert_eq!(cfg.beam_size, 3);
        assert_eq!(cfg.write_threshold, 0.5);
        let json = serde_json::to_string(&EngineConfig::default()).unwrap();
        assert!(!json.contains("expansion_cap"));
    }
}
