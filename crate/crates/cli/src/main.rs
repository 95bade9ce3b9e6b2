use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use chattox_core::aggregate::GroupingConfig;
use chattox_core::classify::{
    classify_batch, load_model, Classifier, ClassifierConfig, Lexicon, OracleClassifier,
};
use chattox_core::consensus::{agreement_report, consensus_label, ConsensusConfig};
use chattox_core::corpus::{
    corpus_stats, english_only, parse_annotations, parse_chatlog, parse_vtt, read_labeled,
    write_labeled, ChatlogFormat, Label, LabeledMessage,
};
use chattox_core::evalkit::{
    evaluate_units, granularity_units, match_split, render_table, EvalConfig, Granularity,
    SplitSpec, TranscriptMode,
};

mod bench;

const MODEL_DIR_ENV: &str = "CHATTOX_MODEL_DIR";

#[derive(Parser)]
#[command(
    name = "chattox",
    version,
    about = "Toxicity tooling for multiplayer game chat"
)]
struct Cli {
    /// Seed for every random choice; echoed into outputs.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Toxic-probability cut-off.
    #[arg(long, global = true, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, global = true, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Pretty,
}

#[derive(Subcommand)]
enum Command {
    /// Turn annotator votes into labels and report agreement.
    Consensus(ConsensusArgs),
    /// Split a labeled corpus into train and test files.
    Split(SplitArgs),
    /// Score a classifier on a labeled corpus.
    Eval(EvalArgs),
    /// Classify lines read from standard input.
    Classify(BackendArgs),
    /// Flag toxic lines in a WebVTT or SRT caption file.
    ScanCaptions(CaptionArgs),
    /// Measure scan throughput on synthetic text units.
    Bench(bench::BenchArgs),
    /// Summarise a labeled corpus.
    Stats(StatsArgs),
}

/// Classifier selection. Without flags the model directory from the
/// environment is used.
#[derive(Args, Clone, Default)]
pub(crate) struct BackendArgs {
    /// ONNX model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Tokenizer sidecar JSON; defaults to tokenizer.json next to the model.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Keyword lexicon JSON, or `builtin`.
    #[arg(long, num_args = 0..=1, default_missing_value = "builtin")]
    lexicon: Option<String>,
}

impl BackendArgs {
    pub(crate) fn resolve(&self, cfg: &ClassifierConfig) -> Result<Arc<dyn Classifier>> {
        if let Some(lex) = &self.lexicon {
            let lexicon = if lex == "builtin" {
                Lexicon::builtin()
            } else {
                Lexicon::from_path(Path::new(lex))?
            };
            return Ok(Arc::new(lexicon.with_threshold(cfg.threshold)));
        }
        let (model, tokenizer) = match &self.model {
            Some(m) => {
                let tok = self
                    .tokenizer
                    .clone()
                    .unwrap_or_else(|| sibling(m, "tokenizer.json"));
                (m.clone(), tok)
            }
            None => {
                let Some(dir) = std::env::var_os(MODEL_DIR_ENV) else {
                    bail!("no classifier: pass --model, --lexicon, or set {MODEL_DIR_ENV}");
                };
                let dir = PathBuf::from(dir);
                let tok = self
                    .tokenizer
                    .clone()
                    .unwrap_or_else(|| dir.join("tokenizer.json"));
                (dir.join("model.onnx"), tok)
            }
        };
        let loaded = load_model(&model, &tokenizer, cfg)
            .with_context(|| format!("loading {}", model.display()))?;
        log::info!(
            "loaded {} (quantized: {})",
            model.display(),
            loaded.info().quantized
        );
        Ok(Arc::new(loaded))
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or_else(|| Path::new(".")).join(name)
}

#[derive(Args)]
struct ConsensusArgs {
    /// Annotation JSONL, one `{"id", "votes"}` record per message.
    #[arg(long)]
    annotations: PathBuf,
    /// Chatlog supplying message text; without it only ids and labels are written.
    #[arg(long)]
    chatlog: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LogFormat::Jsonl)]
    chatlog_format: LogFormat,
    /// Output JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Where to write the agreement report; it also goes to standard error.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Toxic votes needed for a Toxic label.
    #[arg(long, default_value_t = 2)]
    toxic_threshold: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitKind {
    Stratified,
    Match,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitKind::Stratified)]
    mode: SplitKind,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Exact number of training matches for `--mode match`.
    #[arg(long)]
    train_matches: Option<usize>,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GranularityArg {
    Message,
    Grouped,
    Match,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum TranscriptArg {
    Truncate,
    Chunk,
}

#[derive(Args)]
struct EvalArgs {
    /// Labeled JSONL.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Score a classifier that returns the ground truth (self-test).
    #[arg(long)]
    oracle: bool,
    #[arg(long, value_enum, default_value_t = GranularityArg::Message)]
    granularity: GranularityArg,
    /// Evaluate on the test side of this split instead of the whole file.
    #[arg(long, value_enum)]
    split: Option<SplitKind>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long)]
    train_matches: Option<usize>,
    /// Time window for grouping consecutive messages, in seconds.
    #[arg(long, default_value_t = 10.0)]
    gap_s: f64,
    #[arg(long, value_enum, default_value_t = TranscriptArg::Chunk)]
    transcript: TranscriptArg,
    /// Chunk stride in tokens.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct CaptionArgs {
    /// WebVTT or SRT file.
    input: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Annotation JSONL to add an agreement summary.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn emit(value: &impl Serialize, format: Format) -> Result<()> {
    let out = match format {
        Format::Json => serde_json::to_string(value)?,
        Format::Pretty => serde_json::to_string_pretty(value)?,
    };
    println!("{out}");
    Ok(())
}

impl Cli {
    fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            batch_size: self.batch_size,
            threshold: self.threshold,
            ..Default::default()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = cli.classifier_config();
    cfg.validate()?;
    match &cli.command {
        Command::Consensus(a) => cmd_consensus(a, cli.format),
        Command::Split(a) => cmd_split(a, cli),
        Command::Eval(a) => cmd_eval(a, cli, &cfg),
        Command::Classify(a) => cmd_classify(a, cli.format, &cfg),
        Command::ScanCaptions(a) => cmd_scan_captions(a, cli.format, &cfg),
        Command::Bench(a) => bench::run(a, cli.seed, cli.format, &cfg),
        Command::Stats(a) => cmd_stats(a, cli.format),
    }
}

fn cmd_consensus(a: &ConsensusArgs, format: Format) -> Result<ExitCode> {
    let records = parse_annotations(open(&a.annotations)?)
        .with_context(|| a.annotations.display().to_string())?;
    let cfg = ConsensusConfig {
        toxic_threshold: a.toxic_threshold,
        ..Default::default()
    };
    let mut labels = HashMap::with_capacity(records.len());
    for r in &records {
        labels.insert(r.message_id.clone(), consensus_label(r, &cfg)?);
    }
    let report = agreement_report(&records)?;

    match &a.chatlog {
        Some(path) => {
            let fmt = match a.chatlog_format {
                LogFormat::Jsonl => ChatlogFormat::Jsonl,
                LogFormat::Csv => ChatlogFormat::Csv,
            };
            let parsed =
                parse_chatlog(open(path)?, fmt).with_context(|| path.display().to_string())?;
            let mut dataset = Vec::with_capacity(labels.len());
            let mut unlabeled = 0usize;
            for m in parsed.messages {
                match labels.remove(&m.message_id) {
                    Some(label) => dataset.push(LabeledMessage::new(m, label)),
                    None => unlabeled += 1,
                }
            }
            if let Some(id) = labels.keys().min() {
                bail!(
                    "annotated message `{id}` is missing from {}",
                    path.display()
                );
            }
            if unlabeled > 0 {
                log::warn!("{unlabeled} chatlog messages have no annotations and were left out");
            }
            write_labeled(&a.out, &dataset)?;
        }
        None => {
            let mut out = create(&a.out)?;
            for r in &records {
                let line = json!({"id": r.message_id, "label": consensus_label(r, &cfg)?});
                writeln!(out, "{line}")?;
            }
            out.flush()?;
        }
    }

    let report_json = serde_json::to_string(&report)?;
    eprintln!("{report_json}");
    if let Some(path) = &a.report {
        std::fs::write(path, format!("{report_json}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let mut counts = [0usize; 3];
    for r in &records {
        counts[consensus_label(r, &cfg)?.index()] += 1;
    }
    emit(
        &json!({
            "items": records.len(),
            "toxic": counts[Label::Toxic.index()],
            "nontoxic": counts[Label::NonToxic.index()],
            "nonenglish": counts[Label::NonEnglish.index()],
            "agreement": report,
        }),
        format,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn load_dataset(path: &Path) -> Result<Vec<LabeledMessage>> {
    let (data, report) = read_labeled(path)?;
    if !report.ignored_fields.is_empty() {
        log::warn!(
            "ignored fields in {}: {:?}",
            path.display(),
            report.ignored_fields
        );
    }
    Ok(data)
}

fn split_dataset(
    data: &[LabeledMessage],
    mode: SplitKind,
    fraction: f64,
    train_matches: Option<usize>,
    seed: u64,
) -> Result<chattox_core::evalkit::Split> {
    let english = english_only(data);
    Ok(match (mode, train_matches) {
        (SplitKind::Match, Some(n)) => match_split(&english, n, seed)?,
        (SplitKind::Match, None) => SplitSpec {
            train_fraction: fraction,
            ..SplitSpec::by_match(seed)
        }
        .apply(&english)?,
        (SplitKind::Stratified, _) => SplitSpec {
            train_fraction: fraction,
            ..SplitSpec::stratified(seed)
        }
        .apply(&english)?,
    })
}

fn side_summary(side: &[LabeledMessage]) -> serde_json::Value {
    let toxic = side.iter().filter(|m| m.label == Label::Toxic).count();
    let mut matches: Vec<&str> = side.iter().map(|m| m.message.match_id.as_str()).collect();
    matches.sort_unstable();
    matches.dedup();
    json!({"messages": side.len(), "toxic": toxic, "nontoxic": side.len() - toxic, "matches": matches.len()})
}

fn cmd_split(a: &SplitArgs, cli: &Cli) -> Result<ExitCode> {
    let data = load_dataset(&a.input)?;
    let split = split_dataset(&data, a.mode, a.train_fraction, a.train_matches, cli.seed)?;
    write_labeled(&a.train_out, &split.train)?;
    write_labeled(&a.test_out, &split.test)?;
    emit(
        &json!({
            "seed": cli.seed,
            "mode": match a.mode { SplitKind::Stratified => "stratified", SplitKind::Match => "match" },
            "train": side_summary(&split.train),
            "test": side_summary(&split.test),
        }),
        cli.format,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: &EvalArgs, cli: &Cli, cfg: &ClassifierConfig) -> Result<ExitCode> {
    let data = load_dataset(&a.data)?;
    let (data, seed) = match a.split {
        Some(mode) => (
            split_dataset(&data, mode, a.train_fraction, a.train_matches, cli.seed)?.test,
            Some(cli.seed),
        ),
        None => (data, None),
    };
    let levels: &[Granularity] = match a.granularity {
        GranularityArg::Message => &[Granularity::Message],
        GranularityArg::Grouped => &[Granularity::Grouped],
        GranularityArg::Match => &[Granularity::Match],
        GranularityArg::All => &[
            Granularity::Message,
            Granularity::Grouped,
            Granularity::Match,
        ],
    };
    let config = EvalConfig {
        classifier: *cfg,
        grouping: GroupingConfig {
            gap_s: a.gap_s,
            ..Default::default()
        },
        transcript_mode: match a.transcript {
            TranscriptArg::Truncate => TranscriptMode::Truncate,
            TranscriptArg::Chunk => TranscriptMode::Chunk,
        },
        stride: a.stride,
        seed,
    };
    let backend = if a.oracle {
        None
    } else {
        Some(a.backend.resolve(cfg)?)
    };
    let mut reports = Vec::new();
    for &level in levels {
        let units = granularity_units(&data, level, &config.grouping)?;
        let (report, _) = match &backend {
            Some(c) => evaluate_units(c.as_ref(), &units, level, &config)?,
            None => {
                let oracle =
                    OracleClassifier::from_pairs(units.iter().map(|u| (u.text.clone(), u.label)));
                evaluate_units(&oracle, &units, level, &config)?
            }
        };
        reports.push(report);
    }
    match cli.format {
        Format::Json => {
            for r in &reports {
                println!("{}", r.to_json());
            }
        }
        Format::Pretty => print!("{}", render_table(&reports)),
    }
    Ok(ExitCode::SUCCESS)
}

enum InputLine {
    Text(String),
    Empty,
    Undecodable,
}

fn cmd_classify(a: &BackendArgs, format: Format, cfg: &ClassifierConfig) -> Result<ExitCode> {
    let mut raw = Vec::new();
    io::stdin()
        .lock()
        .read_to_end(&mut raw)
        .context("reading standard input")?;
    let mut lines: Vec<&[u8]> = raw.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    let classifier = a.resolve(cfg)?;
    let inputs: Vec<InputLine> = lines
        .iter()
        .map(|l| {
            let l = l.strip_suffix(b"\r").unwrap_or(l);
            match std::str::from_utf8(l) {
                Ok(s) if s.trim().is_empty() => InputLine::Empty,
                Ok(s) => InputLine::Text(s.to_string()),
                Err(_) => InputLine::Undecodable,
            }
        })
        .collect();
    let texts: Vec<&str> = inputs
        .iter()
        .filter_map(|i| match i {
            InputLine::Text(t) => Some(t.as_str()),
            _ => None,
        })
        .collect();
    let predictions = classify_batch(&texts, classifier.as_ref(), cfg)?;
    let mut predictions = predictions.into_iter();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (n, input) in inputs.iter().enumerate() {
        let line = n + 1;
        match (input, format) {
            (InputLine::Text(text), Format::Json) => {
                let p = predictions.next().expect("one prediction per text line");
                writeln!(
                    out,
                    "{}",
                    json!({"line": line, "text": text, "score": p.toxic_score, "label": p.label})
                )?;
            }
            (InputLine::Text(text), Format::Pretty) => {
                let p = predictions.next().expect("one prediction per text line");
                writeln!(
                    out,
                    "{:<9} {:.4}  {}",
                    p.label.as_str(),
                    p.toxic_score,
                    text
                )?;
            }
            (InputLine::Empty, Format::Json) => {
                writeln!(out, "{}", json!({"line": line, "skipped": "empty"}))?
            }
            (InputLine::Empty, Format::Pretty) => writeln!(out, "{:<9} {:>6}", "skipped", "-")?,
            (InputLine::Undecodable, Format::Json) => {
                writeln!(out, "{}", json!({"line": line, "error": "invalid utf-8"}))?
            }
            (InputLine::Undecodable, Format::Pretty) => {
                writeln!(out, "{:<9} {:>6}  invalid utf-8", "error", "-")?
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CaptionRow {
    start_s: f64,
    end_s: f64,
    line: String,
    score: f64,
    flag: bool,
}

fn cmd_scan_captions(a: &CaptionArgs, format: Format, cfg: &ClassifierConfig) -> Result<ExitCode> {
    let cues = parse_vtt(open(&a.input)?).with_context(|| a.input.display().to_string())?;
    let classifier = a.backend.resolve(cfg)?;
    let mut rows: Vec<CaptionRow> = Vec::new();
    for cue in &cues {
        for line in &cue.lines {
            rows.push(CaptionRow {
                start_s: cue.start_s,
                end_s: cue.end_s,
                line: line.clone(),
                score: 0.0,
                flag: false,
            });
        }
    }
    let predictions = classify_batch(
        &rows.iter().map(|r| r.line.as_str()).collect::<Vec<_>>(),
        classifier.as_ref(),
        cfg,
    )?;
    for (row, p) in rows.iter_mut().zip(predictions) {
        row.score = p.toxic_score;
        row.flag = p.is_toxic();
    }
    let flagged = rows.iter().filter(|r| r.flag).count();
    if let Some(path) = &a.out {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, &rows)?;
        writeln!(out)?;
        out.flush()?;
    }
    match format {
        Format::Json => {
            for r in &rows {
                println!("{}", serde_json::to_string(r)?);
            }
        }
        Format::Pretty => {
            for r in &rows {
                let mark = if r.flag { "TOXIC" } else { "" };
                println!(
                    "{:>9.3}  {:.4}  {:<5}  {}",
                    r.start_s, r.score, mark, r.line
                );
            }
            println!("{flagged} of {} lines flagged", rows.len());
        }
    }
    Ok(if flagged > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_stats(a: &StatsArgs, format: Format) -> Result<ExitCode> {
    let data = load_dataset(&a.input)?;
    let agreement = match &a.annotations {
        Some(path) => Some(agreement_report(&parse_annotations(open(path)?)?)?),
        None => None,
    };
    emit(
        &json!({"corpus": corpus_stats(&data), "agreement": agreement}),
        format,
    )?;
    Ok(ExitCode::SUCCESS)
}
