//! Simultaneous-model interface and a deterministic synthetic implementation.
//!
//! A simultaneous model encodes source tokens incrementally and, at each
//! decoder step, returns a distribution over output tokens together with a
//! *write probability*: when it falls below the engine's threshold the model
//! has not seen enough input and another source token must be read instead.
//!
//! [`SyntheticModel`] stands in for a trained model. Its distributions come
//! from a counter-based hash of `(seed, reads, written)`, so every output is
//! reproducible bit for bit, and its write probability follows a wait-k
//! schedule, which makes decoding behavior checkable by direct simulation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenId, TokenSeq, VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidToken { id: u32, size: usize },
    #[error("cannot append source tokens after EOS was read")]
    ReadAfterEos,
    #[error("decoder_step requires at least one source token read")]
    NoReads,
    #[error("batched decoder step requires a non-empty batch")]
    EmptyBatch,
    #[error("batch length mismatch: {states} states vs {outputs} last outputs")]
    BatchLengthMismatch { states: usize, outputs: usize },
    #[error("write_sharpness must be positive, got {0}")]
    InvalidSharpness(f64),
    #[error("failed to read model config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse model config: {0}")]
    ConfigParse(#[from] serde_json::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// One decoder step's result: log probabilities over the whole vocabulary
/// (exp sums to 1 within 1e-9) and the write probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    pub log_probs: Vec<f64>,
    pub write_prob: f64,
}

/// Interface every simultaneous model exposes to the decoding engine.
///
/// States are opaque, cloneable handles over the model's cached computation
/// (for a transformer, the per-layer KV cache). Cloning must yield a fully
/// independent state: mutating the clone never affects the original, which is
/// what checkpoint/rewind relies on.
pub trait StreamingModel {
    type State: Clone + PartialEq + std::fmt::Debug;

    fn vocab_size(&self) -> usize;

    /// Fresh state: nothing read, nothing written.
    fn initial_state(&self) -> Self::State;

    /// Feeds one more source token to the incremental encoder. The original
    /// state is unchanged; the returned state has `read_count + 1`.
    fn encoder_append(
        &self,
        state: &Self::State,
        token: TokenId,
    ) -> Result<Self::State, ModelError>;

    /// Runs one decoder step conditioned on `last_output` (BOS on the very
    /// first step of a sentence). Returns the distribution for the next
    /// output token plus the advanced state.
    fn decoder_step(
        &self,
        state: &Self::State,
        last_output: TokenId,
    ) -> Result<(DecoderOutput, Self::State), ModelError>;

    /// Evaluates a ragged batch of decoder steps. Element `i` equals
    /// `decoder_step(states[i], last_outputs[i])` exactly.
    fn decoder_step_batched(
        &self,
        states: &[Self::State],
        last_outputs: &[TokenId],
    ) -> Result<Vec<(DecoderOutput, Self::State)>, ModelError> {
        if states.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if states.len() != last_outputs.len() {
            return Err(ModelError::BatchLengthMismatch {
                states: states.len(),
                outputs: last_outputs.len(),
            });
        }
        states
            .iter()
            .zip(last_outputs)
            .map(|(s, &t)| self.decoder_step(s, t))
            .collect()
    }
}

/// Cached state of the synthetic model: the full operation history. This is
/// the hash-model analogue of an encoder/decoder KV cache; two states built by
/// identical operation sequences compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelState {
    src: TokenSeq,
    out: TokenSeq,
    eos_read: bool,
    /// Whether the conventional first decoder step (fed BOS) happened. Needed
    /// to tell that step apart from BOS legitimately chosen as output.
    stepped: bool,
}

impl ModelState {
    fn new() -> Self {
        Self {
            src: TokenSeq::new(),
            out: TokenSeq::new(),
            eos_read: false,
            stepped: false,
        }
    }

    /// Source tokens consumed so far.
    pub fn read_count(&self) -> usize {
        self.src.len()
    }

    /// Output tokens fed back through the decoder so far (BOS excluded).
    pub fn written_tokens(&self) -> &[TokenId] {
        &self.out
    }

    pub fn eos_read(&self) -> bool {
        self.eos_read
    }

    /// Order-sensitive digest of the operation history; the test-facing
    /// notion of state equality.
    pub fn digest(&self) -> u64 {
        let mut h = splitmix64(0x5eed_0001);
        for &t in &self.src {
            h = splitmix64(h ^ u64::from(t.0));
        }
        h = splitmix64(h ^ 0x00ff_ee00); // domain separator between histories
        for &t in &self.out {
            h = splitmix64(h ^ u64::from(t.0));
        }
        h = splitmix64(h ^ u64::from(self.eos_read));
        splitmix64(h ^ u64::from(self.stepped))
    }
}

impl Default for ModelState {
    fn default() -> Self {
        Self::new()
    }
}

/// JSON form of the synthetic model configuration:
/// `{"seed":0,"wait_k":1,"write_sharpness":4.0,"vocab_path":"vocab.txt"}`.
/// A relative `vocab_path` resolves against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticModelConfig {
    #[serde(default)]
    pub seed: u64,
    pub wait_k: usize,
    pub write_sharpness: f64,
    pub vocab_path: PathBuf,
}

impl SyntheticModelConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ModelError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Loads the vocabulary and builds the model. `base_dir` anchors a
    /// relative `vocab_path`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<SyntheticModel, ModelError> {
        let vocab_path = match base_dir {
            Some(dir) if self.vocab_path.is_relative() => dir.join(&self.vocab_path),
            _ => self.vocab_path.clone(),
        };
        let vocab = Vocabulary::from_file(vocab_path)?;
        SyntheticModel::new(vocab, self.seed, self.wait_k, self.write_sharpness)
    }
}

/// Deterministic stand-in for a trained simultaneous model.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    vocab: Vocabulary,
    seed: u64,
    wait_k: usize,
    write_sharpness: f64,
    emit_eos: bool,
}

impl SyntheticModel {
    pub fn new(
        vocab: Vocabulary,
        seed: u64,
        wait_k: usize,
        write_sharpness: f64,
    ) -> Result<Self, ModelError> {
        if write_sharpness.is_nan() || write_sharpness <= 0.0 {
            return Err(ModelError::InvalidSharpness(write_sharpness));
        }
        Ok(Self {
            vocab,
            seed,
            wait_k,
            write_sharpness,
            emit_eos: true,
        })
    }

    /// Variant whose EOS probability is negligible, so decoding always runs
    /// into the output-length cap. Used to exercise forced-write limits.
    pub fn suppress_eos(mut self) -> Self {
        self.emit_eos = false;
        self
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn wait_k(&self) -> usize {
        self.wait_k
    }

    fn check_token(&self, token: TokenId) -> Result<(), ModelError> {
        if token.index() >= self.vocab.len() {
            return Err(ModelError::InvalidToken {
                id: token.0,
                size: self.vocab.len(),
            });
        }
        Ok(())
    }

    /// The synthetic distribution for a decoder conditioned on `reads` source
    /// tokens and the `written` output history.
    ///
    /// Token weights come from a counter-based hash of
    /// `(seed, reads, written)`, normalized over the vocabulary. The EOS
    /// weight grows monotonically once `written.len() >= reads`, so greedy
    /// continuation terminates promptly after the input is exhausted. The
    /// write probability is `logistic(sharpness * (reads - written - wait_k))`,
    /// i.e. a wait-k schedule under a 0.5 threshold.
    pub fn distribution(&self, reads: usize, written: &[TokenId]) -> DecoderOutput {
        let n = self.vocab.len();
        let mut h = splitmix64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        h = splitmix64(h ^ reads as u64);
        for &t in written {
            h = splitmix64(h ^ (u64::from(t.0).wrapping_add(0x100)));
        }
        let mut weights: Vec<f64> = (0..n)
            .map(|j| {
                let v = splitmix64(h ^ (j as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
                // Map to [0.05, 1.05): positive with bounded spread.
                0.05 + (v >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        // A trained decoder never produces the start token; keep it negligible.
        weights[self.vocab.bos().index()] *= 1e-6;
        let eos = self.vocab.eos().index();
        if self.emit_eos {
            if written.len() >= reads {
                // Output caught up with the input: EOS dominates, and the
                // margin keeps growing with every further token.
                let excess = (written.len() - reads + 1) as f64;
                weights[eos] += excess * 1.05 * n as f64;
            } else {
                // Keep translations roughly input-length: EOS stays
                // negligible until the output catches up.
                weights[eos] *= 1e-6;
            }
        } else {
            weights[eos] = 1e-12;
        }
        let total: f64 = weights.iter().sum();
        let log_probs = weights.iter().map(|w| (w / total).ln()).collect();
        let gap = reads as i64 - written.len() as i64 - self.wait_k as i64;
        let write_prob = logistic(self.write_sharpness * gap as f64);
        DecoderOutput {
            log_probs,
            write_prob,
        }
    }
}

impl StreamingModel for SyntheticModel {
    type State = ModelState;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn initial_state(&self) -> ModelState {
        ModelState::new()
    }

    fn encoder_append(&self, state: &ModelState, token: TokenId) -> Result<ModelState, ModelError> {
        self.check_token(token)?;
        if state.eos_read {
            return Err(ModelError::ReadAfterEos);
        }
        let mut next = state.clone();
        next.src.push(token);
        next.eos_read = token == self.vocab.eos();
        Ok(next)
    }

    fn decoder_step(
        &self,
        state: &ModelState,
        last_output: TokenId,
    ) -> Result<(DecoderOutput, ModelState), ModelError> {
        self.check_token(last_output)?;
        if state.src.is_empty() {
            return Err(ModelError::NoReads);
        }
        let mut next = state.clone();
        // BOS is the start-of-output convention on the first step; it is not
        // part of the written history. Any later BOS is a real output token.
        if next.stepped || last_output != self.vocab.bos() {
            next.out.push(last_output);
        }
        next.stepped = true;
        let output = self.distribution(next.src.len(), &next.out);
        Ok((output, next))
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SplitMix64 finalizer; the deterministic mixing primitive behind the
/// synthetic distribution and state digests.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
