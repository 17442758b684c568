//! Replay/benchmark CLI: feeds an ASR event log (or a sentences file,
//! simulated word by word) through the streaming engine or the retranslation
//! baseline and writes a metrics report plus full event and display traces.
//!
//! Exit codes: 0 success, 2 input error, 3 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use simulbeam::harness::{run, InputSource, Mode, RunSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliMode {
    Streaming,
    Retranslate,
}

#[derive(Debug, Parser)]
#[command(
    name = "simulbeam",
    about = "Streaming beam-search translation benchmark runner"
)]
struct Args {
    /// Decoding system to run.
    #[arg(long, value_enum, default_value_t = CliMode::Streaming)]
    mode: CliMode,

    /// Beam size.
    #[arg(long, default_value_t = 1)]
    beam: usize,

    /// JSONL ASR event log to replay.
    #[arg(
        long,
        conflicts_with = "sentences",
        required_unless_present = "sentences"
    )]
    events: Option<PathBuf>,

    /// Sentences file (one per line) fed word by word as final events.
    #[arg(long)]
    sentences: Option<PathBuf>,

    /// Model config JSON: {"seed":0,"wait_k":1,"write_sharpness":4.0,"vocab_path":"..."}.
    #[arg(long)]
    model: PathBuf,

    /// Reference translations, one line per sentence; enables BLEU.
    #[arg(long)]
    refs: Option<PathBuf>,

    /// Output directory for report.json, events.jsonl, display.jsonl.
    #[arg(long)]
    out: PathBuf,

    /// Write-probability threshold below which the model reads.
    #[arg(long, default_value_t = 0.5)]
    write_threshold: f64,

    /// Output length cap coefficient a in ⌊a·x + b⌋.
    #[arg(long, default_value_t = 1.5)]
    len_a: f64,

    /// Output length cap coefficient b in ⌊a·x + b⌋.
    #[arg(long, default_value_t = 5.0)]
    len_b: f64,

    /// Overrides the model config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let input = match (&args.events, &args.sentences) {
        (Some(path), None) => InputSource::EventsFile(path.clone()),
        (None, Some(path)) => InputSource::SentencesFile(path.clone()),
        _ => unreachable!("clap enforces exactly one input source"),
    };
    let spec = RunSpec {
        mode: match args.mode {
            CliMode::Streaming => Mode::Streaming,
            CliMode::Retranslate => Mode::Retranslate,
        },
        beam_size: args.beam,
        input,
        model_config_path: args.model,
        references_path: args.refs,
        output_dir: args.out.clone(),
        write_threshold: args.write_threshold,
        len_a: args.len_a,
        len_b: args.len_b,
        seed: args.seed,
    };
    match run(&spec) {
        Ok(report) => {
            match report.bleu {
                Some(bleu) => println!("bleu              {bleu:.4}"),
                None => println!("bleu              n/a (no references)"),
            }
            println!("average_lag       {:.4}", report.average_lag);
            println!("char_flicker_pct  {:.4}", report.char_flicker_pct);
            println!("decoder_steps     {}", report.counters.decoder_steps);
            println!("encoder_steps     {}", report.counters.encoder_steps);
            println!("batched_calls     {}", report.counters.batched_calls);
            println!(
                "report written to {}",
                args.out.join("report.json").display()
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
