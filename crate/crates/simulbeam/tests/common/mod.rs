//! Shared oracles and fuzz machinery for the integration suites.
//!
//! Everything here recomputes expected behavior straight from the synthetic
//! distribution, independently of the engine's search code.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use simulbeam::events::{AsrEvent, EventKind, TranslationEvent};
use simulbeam::model::SyntheticModel;
use simulbeam::tokenizer::{TokenId, TokenSeq, Vocabulary};

pub fn cap_for(len_a: f64, len_b: f64, reads: usize) -> usize {
    (len_a * reads as f64 + len_b).floor().max(0.0) as usize
}

fn argmax(log_probs: &[f64], skip: Option<TokenId>) -> TokenId {
    let mut best: Option<usize> = None;
    for (j, lp) in log_probs.iter().enumerate() {
        if skip == Some(TokenId(j as u32)) {
            continue;
        }
        match best {
            Some(b) if log_probs[b] >= *lp => {}
            _ => best = Some(j),
        }
    }
    TokenId(best.expect("non-empty distribution") as u32)
}

/// Reference greedy loop: reads the source token by token, writes whenever
/// the write probability clears the threshold (EOS masked), freezes at the
/// length cap, and force-writes after the input EOS. Mirrors the documented
/// decoding contract directly off the synthetic distribution.
pub fn greedy_reference(
    model: &SyntheticModel,
    src: &[TokenId],
    threshold: f64,
    len_a: f64,
    len_b: f64,
) -> TokenSeq {
    let eos = model.vocab().eos();
    let mut written = TokenSeq::new();
    let mut frozen = false;
    let mut reads = 0usize;
    for _ in src {
        reads += 1;
        while !frozen {
            if written.len() >= cap_for(len_a, len_b, reads) {
                frozen = true;
                break;
            }
            let dist = model.distribution(reads, &written);
            if dist.write_prob < threshold {
                break;
            }
            written.push(argmax(&dist.log_probs, Some(eos)));
        }
    }
    reads += 1; // the input EOS
    if !frozen {
        let cap = cap_for(len_a, len_b, reads);
        while written.len() < cap {
            let dist = model.distribution(reads, &written);
            let next = argmax(&dist.log_probs, None);
            written.push(next);
            if next == eos {
                break;
            }
        }
    }
    if written.last() == Some(&eos) {
        written.pop();
    }
    written
}

/// One finished decoding path of the policy tree.
#[derive(Debug, Clone)]
pub struct Leaf {
    pub tokens: TokenSeq,
    pub sum_log_prob: f64,
}

impl Leaf {
    pub fn score(&self) -> f64 {
        self.sum_log_prob / self.tokens.len().max(1) as f64
    }
}

struct PolicyTree<'m> {
    model: &'m SyntheticModel,
    n: usize,
    eos: TokenId,
    total: usize,
    threshold: f64,
    len_a: f64,
    len_b: f64,
    leaves: Vec<Leaf>,
}

impl PolicyTree<'_> {
    fn leaf(&mut self, tokens: TokenSeq, sum_log_prob: f64) {
        self.leaves.push(Leaf {
            tokens,
            sum_log_prob,
        });
    }

    fn recurse(&mut self, reads: usize, written: &TokenSeq, sum: f64) {
        if reads < self.total {
            let cap = cap_for(self.len_a, self.len_b, reads);
            if written.len() >= cap {
                // Frozen at the cap mid-stream: the path can never extend.
                self.leaf(written.clone(), sum);
                return;
            }
            let dist = self.model.distribution(reads, written);
            if dist.write_prob < self.threshold {
                self.recurse(reads + 1, written, sum);
                return;
            }
            for j in 0..self.n as u32 {
                let token = TokenId(j);
                if token == self.eos {
                    continue; // masked before the input EOS
                }
                let mut next = written.clone();
                next.push(token);
                let next_sum = sum + dist.log_probs[token.index()];
                if next.len() >= cap {
                    self.leaf(next, next_sum);
                } else {
                    self.recurse(reads, &next, next_sum);
                }
            }
        } else {
            // Forced writes after the input EOS.
            let cap = cap_for(self.len_a, self.len_b, self.total);
            if written.len() >= cap {
                self.leaf(written.clone(), sum);
                return;
            }
            let dist = self.model.distribution(reads, written);
            for j in 0..self.n as u32 {
                let token = TokenId(j);
                let mut next = written.clone();
                next.push(token);
                let next_sum = sum + dist.log_probs[token.index()];
                if token == self.eos || next.len() >= cap {
                    self.leaf(next, next_sum);
                } else {
                    self.recurse(reads, &next, next_sum);
                }
            }
        }
    }
}

/// Exhaustively enumerates every decoding path under the read/write-threshold
/// policy: the write decision at a `(reads, written)` point is fixed by the
/// model, so the tree only branches over token choices at WRITE points.
pub fn enumerate_policy_tree(
    model: &SyntheticModel,
    src: &[TokenId],
    threshold: f64,
    len_a: f64,
    len_b: f64,
) -> Vec<Leaf> {
    let total = src.len() + 1; // including EOS
    let mut tree = PolicyTree {
        model,
        n: model.vocab().len(),
        eos: model.vocab().eos(),
        total,
        threshold,
        len_a,
        len_b,
        leaves: Vec::new(),
    };
    tree.recurse(1.min(total), &TokenSeq::new(), 0.0);
    tree.leaves
}

/// Best leaf by length-normalized score, first found wins ties.
pub fn best_leaf(mut leaves: Vec<Leaf>) -> Leaf {
    let mut best = 0usize;
    for i in 1..leaves.len() {
        if leaves[i].score() > leaves[best].score() {
            best = i;
        }
    }
    leaves.swap_remove(best)
}

/// Vocabulary used by the text-level fuzz corpora.
pub fn fuzz_vocab() -> Vocabulary {
    Vocabulary::with_entries([
        "a", "b", "c", "d", "e", "f", "g", "h", " ", ".", "!", "?", "ab", "ba", "abc", "cab",
        "abcd", "fg", "hh",
    ])
    .unwrap()
}

const FUZZ_LETTERS: &[char] = &['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'];

pub fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(2..=6);
    let mut sentence = String::new();
    for i in 0..words {
        if i > 0 {
            sentence.push(' ');
        }
        for _ in 0..rng.gen_range(1..=4) {
            sentence.push(FUZZ_LETTERS[rng.gen_range(0..FUZZ_LETTERS.len())]);
        }
    }
    sentence.push(['.', '!', '?'][rng.gen_range(0..3)]);
    sentence
}

pub fn random_session_text(rng: &mut ChaCha8Rng, sentences: usize) -> String {
    (0..sentences)
        .map(|_| random_sentence(rng))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Chops session text into final events of random sizes (splitting words
/// freely), optionally preceded by intermediate previews of the upcoming text
/// with occasional trailing garbage.
pub fn fuzz_event_stream(
    rng: &mut ChaCha8Rng,
    text: &str,
    with_intermediates: bool,
) -> Vec<AsrEvent> {
    let chars: Vec<char> = text.chars().collect();
    let mut events = Vec::new();
    let mut seq = 0u64;
    let mut pos = 0usize;
    while pos < chars.len() {
        let len = rng.gen_range(1..=5).min(chars.len() - pos);
        let chunk: String = chars[pos..pos + len].iter().collect();
        if with_intermediates {
            for _ in 0..rng.gen_range(0..=2) {
                let preview_len = rng.gen_range(0..=len);
                let mut preview: String = chars[pos..pos + preview_len].iter().collect();
                if rng.gen_bool(0.3) {
                    preview.push(FUZZ_LETTERS[rng.gen_range(0..FUZZ_LETTERS.len())]);
                }
                events.push(AsrEvent::intermediate_event(seq, preview));
                seq += 1;
            }
        }
        events.push(AsrEvent::final_event(seq, chunk));
        seq += 1;
        pos += len;
    }
    events
}

/// The finals-only control stream for a fuzzed stream.
pub fn finals_only(events: &[AsrEvent]) -> Vec<AsrEvent> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::Final)
        .cloned()
        .collect()
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Display state after one processed input event: committed finals plus the
/// intermediate preview that event left on screen.
pub fn display_after_batch(final_text: &str, batch: &[TranslationEvent]) -> Option<String> {
    if batch.is_empty() {
        return None;
    }
    let intermediate = match batch.last() {
        Some(e) if e.kind == EventKind::Intermediate => e.text.as_str(),
        _ => "",
    };
    Some(format!("{final_text}{intermediate}"))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
