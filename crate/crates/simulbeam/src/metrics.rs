//! Run metrics: corpus BLEU, word average lag, character flicker, and
//! deterministic compute-cost counters.
//!
//! Cost is reported in model-step units rather than wall-clock time so runs
//! reproduce exactly; `wall_clock_ms` is informational only and excluded from
//! serialized reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("BLEU requires a non-empty corpus")]
    EmptyCorpus,
    #[error("BLEU corpus size mismatch: {references} references vs {hypotheses} hypotheses")]
    CorpusSizeMismatch {
        references: usize,
        hypotheses: usize,
    },
    #[error("average lag requires a non-empty source")]
    EmptySource,
    #[error("lag trace has {g} entries but target_len is {target_len}")]
    LagLengthMismatch { g: usize, target_len: usize },
}

/// Full display strings after each write to the display.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayTrace {
    pub states: Vec<String>,
}

impl DisplayTrace {
    pub fn push(&mut self, state: String) {
        self.states.push(state);
    }
}

/// Per-sentence lag schedule: `g[t-1]` is the number of source words read
/// when final target word `t` was emitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagTrace {
    pub g: Vec<usize>,
    pub source_len: usize,
    pub target_len: usize,
}

/// Deterministic compute-cost accounting for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub decoder_steps: u64,
    pub encoder_steps: u64,
    pub batched_calls: u64,
    /// Informational; never serialized so reports stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Encoder,
    Decoder,
}

impl CostCounters {
    /// Records one model invocation: a decoder batch counts `batch_size`
    /// decoder steps and one batched call; an encoder step counts likewise.
    pub fn record_step(&mut self, kind: StepKind, batch_size: usize) {
        match kind {
            StepKind::Decoder => {
                self.decoder_steps += batch_size as u64;
                self.batched_calls += 1;
            }
            StepKind::Encoder => {
                self.encoder_steps += batch_size as u64;
            }
        }
    }
}

/// Summary of one benchmark run.
///
/// `bleu` is `null` when no references were supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: Option<f64>,
    pub average_lag: f64,
    pub char_flicker_pct: f64,
    pub counters: CostCounters,
}

const MAX_NGRAM: usize = 4;
const SMOOTH_EPS: f64 = 1e-9;

/// Corpus-level BLEU-4 over final outputs: geometric mean of modified n-gram
/// precisions times the brevity penalty, scaled to `[0, 100]`.
///
/// If there is no unigram match at all the score is exactly 0; otherwise any
/// zero higher-order precision is smoothed with 1e-9.
pub fn bleu(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> Result<f64, MetricsError> {
    if references.is_empty() || hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if references.len() != hypotheses.len() {
        return Err(MetricsError::CorpusSizeMismatch {
            references: references.len(),
            hypotheses: hypotheses.len(),
        });
    }

    let mut matches = [0u64; MAX_NGRAM];
    let mut totals = [0u64; MAX_NGRAM];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (reference, hypothesis) in references.iter().zip(hypotheses) {
        hyp_len += hypothesis.len();
        ref_len += reference.len();
        for n in 1..=MAX_NGRAM {
            if hypothesis.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
            if reference.len() >= n {
                for gram in reference.windows(n) {
                    *ref_counts.entry(gram).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<&[String], u64> = HashMap::new();
            for gram in hypothesis.windows(n) {
                *hyp_counts.entry(gram).or_default() += 1;
            }
            totals[n - 1] += hypothesis.windows(n).count() as u64;
            for (gram, count) in hyp_counts {
                let clipped = count.min(ref_counts.get(gram).copied().unwrap_or(0));
                matches[n - 1] += clipped;
            }
        }
    }

    if matches[0] == 0 {
        return Ok(0.0);
    }
    // Orders with no n-grams anywhere in the hypothesis corpus carry no
    // evidence and are excluded from the geometric mean.
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..MAX_NGRAM {
        if totals[n] == 0 {
            continue;
        }
        orders += 1;
        let precision = if matches[n] == 0 {
            SMOOTH_EPS
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += precision.ln();
    }
    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * (log_sum / orders as f64).exp())
}

/// Word average lag: `AL = (1/τ) Σ_{t=1..τ} [g(t) − (t−1)/γ]` with
/// `γ = target_len / source_len` and `τ` the first `t` with
/// `g(t) = source_len` (or `target_len` if the source is never caught up).
pub fn average_lag(trace: &LagTrace) -> Result<f64, MetricsError> {
    if trace.source_len == 0 {
        return Err(MetricsError::EmptySource);
    }
    if trace.g.len() != trace.target_len {
        return Err(MetricsError::LagLengthMismatch {
            g: trace.g.len(),
            target_len: trace.target_len,
        });
    }
    if trace.target_len == 0 {
        return Ok(0.0);
    }
    let gamma = trace.target_len as f64 / trace.source_len as f64;
    let tau = trace
        .g
        .iter()
        .position(|&g| g == trace.source_len)
        .map(|i| i + 1)
        .unwrap_or(trace.target_len);
    let sum: f64 = trace.g[..tau]
        .iter()
        .enumerate()
        .map(|(i, &g)| g as f64 - i as f64 / gamma)
        .sum();
    Ok(sum / tau as f64)
}

/// Mean percentage of already-displayed characters overwritten per display
/// write: for each consecutive pair with a non-empty old state,
/// `100 · (len(old) − LCP(old, new)) / len(old)`. Pure appends score 0; a
/// trace with fewer than two states scores 0 by convention.
pub fn char_flicker(trace: &DisplayTrace) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for pair in trace.states.windows(2) {
        let old_len = pair[0].chars().count();
        if old_len == 0 {
            continue;
        }
        let lcp = pair[0]
            .chars()
            .zip(pair[1].chars())
            .take_while(|(a, b)| a == b)
            .count();
        total += 100.0 * (old_len - lcp) as f64 / old_len as f64;
        pairs += 1;
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
