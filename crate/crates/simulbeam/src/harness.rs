//! Replay/benchmark runner behind the CLI.
//!
//! A run consumes either a JSONL ASR event log or a plain-text sentences file
//! (simulated as word-by-word final events), drives the streaming engine or
//! the retranslation baseline over it, and writes `report.json`,
//! `events.jsonl`, and `display.jsonl` into the output directory. Replay is
//! untimed: decisions depend only on event order.
//!
//! The display trace records one write per consumed input event: the
//! committed final text plus whatever intermediate preview that event left on
//! screen. Average lag is computed per sentence over final outputs and
//! averaged; BLEU likewise compares final translations against one reference
//! line per sentence.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baseline::RetranslationSession;
use crate::beam::{EngineConfig, EngineError};
use crate::events::{AsrEvent, EventKind, TranslationEvent};
use crate::metrics::{
    average_lag, bleu, char_flicker, CostCounters, DisplayTrace, MetricsError, MetricsReport,
};
use crate::model::{ModelError, StreamingModel, SyntheticModel, SyntheticModelConfig};
use crate::session::{SentenceRecord, StreamingSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Streaming,
    Retranslate,
}

/// Exactly one input source per run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    /// JSONL event log, one event per line.
    EventsFile(PathBuf),
    /// UTF-8 text, one sentence per line, fed word by word as finals.
    SentencesFile(PathBuf),
}

/// Everything one benchmark run needs.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub mode: Mode,
    pub beam_size: usize,
    pub input: InputSource,
    pub model_config_path: PathBuf,
    pub references_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub write_threshold: f64,
    pub len_a: f64,
    pub len_b: f64,
    /// Overrides the model config's seed when set.
    pub seed: Option<u64>,
}

impl RunSpec {
    fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            beam_size: self.beam_size,
            write_threshold: self.write_threshold,
            len_a: self.len_a,
            len_b: self.len_b,
            expansion_cap: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("failed to read {path}: {source}")]
    InputIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed event: {message}")]
    MalformedEvent {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("reference file has {references} lines but the run produced {sentences} sentences")]
    ReferenceMismatch { references: usize, sentences: usize },
    #[error("failed to write {path}: {source}")]
    OutputIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl RunError {
    /// CLI exit code: 3 for configuration problems, 2 for input problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Model(_) | RunError::Config(_) => 3,
            RunError::Engine(EngineError::InvalidConfig(_)) => 3,
            _ => 2,
        }
    }
}

/// Simulates streaming ASR for one sentence: one final event per whitespace
/// word, each carrying a trailing space except the last, which keeps the
/// sentence terminator. Event seq_nos start at 0.
pub fn simulate_word_feed(sentence: &str) -> Vec<AsrEvent> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    words
        .iter()
        .enumerate()
        .map(|(i, word)| {
            let text = if i + 1 < words.len() {
                format!("{word} ")
            } else {
                (*word).to_string()
            };
            AsrEvent::final_event(i as u64, text)
        })
        .collect()
}

/// Common surface of the two session kinds, for one shared drive loop.
trait EventDriver {
    fn process_event(&mut self, event: &AsrEvent) -> Result<Vec<TranslationEvent>, EngineError>;
    fn finish(&mut self) -> Result<Vec<TranslationEvent>, EngineError>;
    fn final_text(&self) -> &str;
    fn sentences(&self) -> &[SentenceRecord];
    fn counters(&self) -> CostCounters;
}

impl<M: StreamingModel> EventDriver for StreamingSession<'_, M> {
    fn process_event(&mut self, event: &AsrEvent) -> Result<Vec<TranslationEvent>, EngineError> {
        StreamingSession::process_event(self, event)
    }
    fn finish(&mut self) -> Result<Vec<TranslationEvent>, EngineError> {
        StreamingSession::finish(self)
    }
    fn final_text(&self) -> &str {
        StreamingSession::final_text(self)
    }
    fn sentences(&self) -> &[SentenceRecord] {
        StreamingSession::sentences(self)
    }
    fn counters(&self) -> CostCounters {
        StreamingSession::counters(self)
    }
}

impl<M: StreamingModel> EventDriver for RetranslationSession<'_, M> {
    fn process_event(&mut self, event: &AsrEvent) -> Result<Vec<TranslationEvent>, EngineError> {
        RetranslationSession::process_event(self, event)
    }
    fn finish(&mut self) -> Result<Vec<TranslationEvent>, EngineError> {
        RetranslationSession::finish(self)
    }
    fn final_text(&self) -> &str {
        RetranslationSession::final_text(self)
    }
    fn sentences(&self) -> &[SentenceRecord] {
        RetranslationSession::sentences(self)
    }
    fn counters(&self) -> CostCounters {
        RetranslationSession::counters(self)
    }
}

struct DriveOutcome {
    emitted: Vec<TranslationEvent>,
    display: DisplayTrace,
    sentences: Vec<SentenceRecord>,
    counters: CostCounters,
}

fn drive(session: &mut dyn EventDriver, events: &[AsrEvent]) -> Result<DriveOutcome, EngineError> {
    let mut emitted = Vec::new();
    let mut display = DisplayTrace::default();
    let mut record = |session: &dyn EventDriver, batch: &[TranslationEvent]| {
        if batch.is_empty() {
            return;
        }
        let intermediate = match batch.last() {
            Some(e) if e.kind == EventKind::Intermediate => e.text.as_str(),
            _ => "",
        };
        display.push(format!("{}{}", session.final_text(), intermediate));
    };
    for event in events {
        let batch = session.process_event(event)?;
        record(session, &batch);
        emitted.extend(batch);
    }
    let batch = session.finish()?;
    record(session, &batch);
    emitted.extend(batch);
    Ok(DriveOutcome {
        emitted,
        display,
        sentences: session.sentences().to_vec(),
        counters: session.counters(),
    })
}

fn load_events(spec: &RunSpec) -> Result<Vec<AsrEvent>, RunError> {
    match &spec.input {
        InputSource::EventsFile(path) => {
            let raw = std::fs::read_to_string(path).map_err(|source| RunError::InputIo {
                path: path.clone(),
                source,
            })?;
            let mut events = Vec::new();
            for (i, line) in raw.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let event: AsrEvent =
                    serde_json::from_str(line).map_err(|e| RunError::MalformedEvent {
                        path: path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                events.push(event);
            }
            Ok(events)
        }
        InputSource::SentencesFile(path) => {
            let raw = std::fs::read_to_string(path).map_err(|source| RunError::InputIo {
                path: path.clone(),
                source,
            })?;
            let mut events = Vec::new();
            let mut seq = 0u64;
            for sentence in raw.lines().filter(|l| !l.trim().is_empty()) {
                for mut event in simulate_word_feed(sentence) {
                    event.seq_no = seq;
                    seq += 1;
                    events.push(event);
                }
            }
            Ok(events)
        }
    }
}

fn load_references(path: &Path) -> Result<Vec<String>, RunError> {
    let raw = std::fs::read_to_string(path).map_err(|source| RunError::InputIo {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(raw
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    let mut file = std::fs::File::create(path).map_err(|source| RunError::OutputIo {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(contents.as_bytes())
        .map_err(|source| RunError::OutputIo {
            path: path.to_path_buf(),
            source,
        })
}

/// Executes one run end to end and writes the report plus full traces into
/// `spec.output_dir`. Identical specs produce byte-identical reports.
pub fn run(spec: &RunSpec) -> Result<MetricsReport, RunError> {
    let engine_config = spec.engine_config();
    engine_config.validate()?;

    let mut model_config = SyntheticModelConfig::from_file(&spec.model_config_path)?;
    if let Some(seed) = spec.seed {
        model_config.seed = seed;
    }
    let model: SyntheticModel = model_config.build(spec.model_config_path.parent())?;
    let events = load_events(spec)?;

    let start = std::time::Instant::now();
    let outcome = match spec.mode {
        Mode::Streaming => {
            let mut session = StreamingSession::new(&model, model.vocab(), engine_config)?;
            drive(&mut session, &events)?
        }
        Mode::Retranslate => {
            let mut session = RetranslationSession::new(&model, model.vocab(), &engine_config)?;
            drive(&mut session, &events)?
        }
    };
    let wall_clock_ms = start.elapsed().as_millis() as u64;

    let bleu_score = match &spec.references_path {
        Some(path) => {
            let references = load_references(path)?;
            if references.len() != outcome.sentences.len() {
                return Err(RunError::ReferenceMismatch {
                    references: references.len(),
                    sentences: outcome.sentences.len(),
                });
            }
            let refs: Vec<Vec<String>> = references
                .iter()
                .map(|r| r.split_whitespace().map(str::to_string).collect())
                .collect();
            let hyps: Vec<Vec<String>> = outcome
                .sentences
                .iter()
                .map(|s| {
                    s.translation
                        .split_whitespace()
                        .map(str::to_string)
                        .collect()
                })
                .collect();
            Some(bleu(&refs, &hyps)?)
        }
        None => None,
    };

    let lags: Vec<f64> = outcome
        .sentences
        .iter()
        .filter(|s| s.lag.source_len > 0 && s.lag.target_len > 0)
        .map(|s| average_lag(&s.lag))
        .collect::<Result<_, _>>()?;
    let average = if lags.is_empty() {
        0.0
    } else {
        lags.iter().sum::<f64>() / lags.len() as f64
    };

    let mut counters = outcome.counters;
    counters.wall_clock_ms = wall_clock_ms;
    let report = MetricsReport {
        bleu: bleu_score,
        average_lag: average,
        char_flicker_pct: char_flicker(&outcome.display),
        counters,
    };

    std::fs::create_dir_all(&spec.output_dir).map_err(|source| RunError::OutputIo {
        path: spec.output_dir.clone(),
        source,
    })?;
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&spec.output_dir.join("report.json"), &(report_json + "\n"))?;

    let mut events_jsonl = String::new();
    for event in &outcome.emitted {
        events_jsonl.push_str(&serde_json::to_string(event).expect("event serializes"));
        events_jsonl.push('\n');
    }
    write_file(&spec.output_dir.join("events.jsonl"), &events_jsonl)?;

    let mut display_jsonl = String::new();
    for state in &outcome.display.states {
        display_jsonl.push_str(&serde_json::to_string(state).expect("string serializes"));
        display_jsonl.push('\n');
    }
    write_file(&spec.output_dir.join("display.jsonl"), &display_jsonl)?;

    Ok(report)
}
