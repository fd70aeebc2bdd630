//! `hlt`: the health-literacy translation pipeline as one binary.
//!
//! Subcommands cover the full flow: sample-data, validate-lexicon,
//! build-corpus, make-silver, split, train, translate, evaluate, hir-report,
//! and gradcheck. A TOML config file can hold shared settings; command-line
//! flags always override it. Exit codes: 0 success, 1 contract violation,
//! 2 bad usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hlt_core::corpus::{
    self, filter_snippets, ingest_path, make_silver, pair_stats, read_parallel, read_snippets,
    split_corpus, write_parallel, write_snippets, CommandPolish, IdentityPolish, IngestOptions,
    PairSide, Polish, SnippetRecord, SourceSite, SplitSpec,
};
use hlt_core::eval::{
    corpus_bleu, hir_report, interpret_bleu, paired_t_test, render_score_csv, render_score_table,
    sentence_bleu, summarize, Smoothing,
};
use hlt_core::lexicon::{load_lexicon, validate_lexicon, Lexicon, LexiconFormat, LoadOptions};
use hlt_core::nmt::{
    self, build_vocab, encode_pairs, gradient_check, trace_to_csv, translate, Checkpoint,
    DecodeMode, ModelConfig, ModelParams, PairIds, TrainConfig,
};
use hlt_core::rng::SplitMix64;
use hlt_core::sample;
use hlt_core::text::Sentence;

#[derive(Parser)]
#[command(name = "hlt", version, about = "Health-literacy translation pipeline")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Random seed controlling every stochastic stage (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the bundled sample corpus dump and sample lexicon.
    SampleData(SampleDataArgs),
    /// Load a lexicon and report containment or format violations.
    ValidateLexicon(ValidateLexiconArgs),
    /// Ingest a JSONL document dump and write filtered snippets.
    BuildCorpus(BuildCorpusArgs),
    /// Generate the silver-standard parallel corpus from snippets.
    MakeSilver(MakeSilverArgs),
    /// Split a parallel dataset into train and valid portions.
    Split(SplitArgs),
    /// Train the translation model from a parallel dataset.
    Train(TrainArgs),
    /// Translate a sentence or a file of sentences.
    Translate(TranslateArgs),
    /// Score hypothesis files against a reference file.
    Evaluate(EvaluateArgs),
    /// Health-illiteracy-rate grid across named dataset stages.
    HirReport(HirReportArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SampleDataArgs {
    /// Directory receiving corpus.jsonl and sample_lexicon.tsv.
    #[arg(long, value_name = "DIR")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ValidateLexiconArgs {
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct BuildCorpusArgs {
    /// JSONL document dump to ingest.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Snippets file to write (JSONL).
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Minimum word tokens for a snippet (default 5).
    #[arg(long)]
    min_words: Option<usize>,
    /// Skip malformed dump lines instead of failing fast.
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Args)]
struct MakeSilverArgs {
    /// Snippets file from build-corpus.
    #[arg(long, value_name = "FILE")]
    snippets: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Directory receiving src.txt, tgt.txt, meta.jsonl.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Polish command (whitespace-split), e.g. "python3 polish.py".
    #[arg(long, value_name = "CMD")]
    polish: Option<String>,
}

#[derive(Args)]
struct SplitArgs {
    /// Parallel dataset directory to split.
    #[arg(long, value_name = "DIR")]
    pairs_dir: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    train_dir: PathBuf,
    #[arg(long, value_name = "DIR")]
    valid_dir: PathBuf,
    /// Fraction of pairs assigned to train (default 0.86).
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset directory (src.txt + tgt.txt + meta.jsonl).
    #[arg(long, value_name = "DIR")]
    train_dir: PathBuf,
    /// Optional validation dataset; reports mean loss after training.
    #[arg(long, value_name = "DIR")]
    valid_dir: Option<PathBuf>,
    /// Checkpoint file to write.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Loss trace CSV to write ("step,loss").
    #[arg(long, value_name = "FILE")]
    loss_trace: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    max_source_len: Option<usize>,
    #[arg(long)]
    max_target_len: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Record the loss every this many steps (default 10).
    #[arg(long)]
    log_every: Option<usize>,
    /// Drop tokens seen fewer times than this (default 1).
    #[arg(long)]
    min_frequency: Option<usize>,
    /// Vocabulary size cap including specials (default 50000).
    #[arg(long)]
    max_vocab: Option<usize>,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Translate one sentence and print it.
    #[arg(long, conflicts_with = "input")]
    sentence: Option<String>,
    /// Translate a file, one sentence per line.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Write translations here instead of standard output.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Beam width; omit for greedy decoding.
    #[arg(long)]
    beam: Option<usize>,
    /// Decoding length cap (default: the model's max target length).
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Hypothesis file; repeat to compare systems.
    #[arg(long, value_name = "FILE", required = true)]
    hyp: Vec<PathBuf>,
    /// Reference file, line-aligned with every hypothesis file.
    #[arg(long = "ref", value_name = "FILE")]
    reference: PathBuf,
    /// Row label per hypothesis file; defaults to the file stem.
    #[arg(long)]
    name: Vec<String>,
    /// Output format: text or csv.
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

#[derive(Args)]
struct HirReportArgs {
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Stage spec NAME=DIR, NAME=DIR:tgt, or NAME=FILE@DIR (sentences from
    /// FILE, sites from DIR's metadata); repeatable, order preserved.
    #[arg(long, value_name = "SPEC", required = true)]
    stage: Vec<String>,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    embed_dim: usize,
    #[arg(long, default_value_t = 5)]
    hidden_dim: usize,
    /// Vocabulary size of the synthetic model.
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    /// Number of synthetic pairs in the batch.
    #[arg(long, default_value_t = 2)]
    pairs: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Fail (exit 1) when the max relative error reaches this.
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

mod config {
    //! TOML config schema. Every field is optional; defaults are applied
    //! after flag and file values are merged (flags win).

    use std::path::PathBuf;

    use serde::Deserialize;

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct File {
        pub lexicon: Option<PathBuf>,
        pub seed: Option<u64>,
        pub min_words: Option<usize>,
        #[serde(default)]
        pub corpus: Corpus,
        #[serde(default)]
        pub model: Model,
        #[serde(default)]
        pub train: Train,
    }

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Corpus {
        pub dump: Option<PathBuf>,
        pub snippets: Option<PathBuf>,
        pub pairs_dir: Option<PathBuf>,
        pub train_fraction: Option<f64>,
        /// Polish command and arguments; absent or empty means identity.
        pub polish: Option<Vec<String>>,
    }

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Model {
        pub embed_dim: Option<usize>,
        pub hidden_dim: Option<usize>,
        pub max_source_len: Option<usize>,
        pub max_target_len: Option<usize>,
    }

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Train {
        pub learning_rate: Option<f64>,
        pub steps: Option<usize>,
        pub batch_size: Option<usize>,
        pub clip_norm: Option<f64>,
        pub log_every: Option<usize>,
        pub min_frequency: Option<usize>,
        pub max_vocab: Option<usize>,
    }
}

struct Settings {
    file: config::File,
    seed: u64,
}

impl Settings {
    fn load(cli: &Cli) -> Result<Settings> {
        let file = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("bad config {}", path.display()))?
            }
            None => config::File::default(),
        };
        let seed = cli.seed.or(file.seed).unwrap_or(0);
        Ok(Settings { file, seed })
    }

    fn lexicon_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf> {
        flag.clone()
            .or_else(|| self.file.lexicon.clone())
            .context("no lexicon given: pass --lexicon or set `lexicon` in the config")
    }

    fn model_config(&self, args: &TrainArgs) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            embed_dim: args.embed_dim.or(self.file.model.embed_dim).unwrap_or(d.embed_dim),
            hidden_dim: args.hidden_dim.or(self.file.model.hidden_dim).unwrap_or(d.hidden_dim),
            max_source_len: args
                .max_source_len
                .or(self.file.model.max_source_len)
                .unwrap_or(d.max_source_len),
            max_target_len: args
                .max_target_len
                .or(self.file.model.max_target_len)
                .unwrap_or(d.max_target_len),
        }
    }

    fn train_config(&self, args: &TrainArgs) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: args
                .learning_rate
                .or(self.file.train.learning_rate)
                .unwrap_or(d.learning_rate),
            steps: args.steps.or(self.file.train.steps).unwrap_or(d.steps),
            batch_size: args.batch_size.or(self.file.train.batch_size).unwrap_or(d.batch_size),
            seed: self.seed,
            clip_norm: args.clip_norm.or(self.file.train.clip_norm).unwrap_or(d.clip_norm),
            log_every: args.log_every.or(self.file.train.log_every).unwrap_or(d.log_every),
        }
    }
}

fn load_lexicon_file(path: &Path) -> Result<Lexicon> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot open lexicon {}", path.display()))?;
    load_lexicon(file, LexiconFormat::Tsv, LoadOptions::default())
        .with_context(|| format!("lexicon {} failed validation", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let settings = Settings::load(&cli)?;
    match &cli.command {
        Command::SampleData(args) => cmd_sample_data(&settings, args),
        Command::ValidateLexicon(args) => cmd_validate_lexicon(&settings, args),
        Command::BuildCorpus(args) => cmd_build_corpus(&settings, args),
        Command::MakeSilver(args) => cmd_make_silver(&settings, args),
        Command::Split(args) => cmd_split(&settings, args),
        Command::Train(args) => cmd_train(&settings, args),
        Command::Translate(args) => cmd_translate(&settings, args),
        Command::Evaluate(args) => cmd_evaluate(&settings, args),
        Command::HirReport(args) => cmd_hir_report(&settings, args),
        Command::Gradcheck(args) => cmd_gradcheck(&settings, args),
    }
}

fn cmd_sample_data(settings: &Settings, args: &SampleDataArgs) -> Result<ExitCode> {
    std::fs::create_dir_all(&args.output_dir)?;
    let docs = sample::documents(settings.seed);
    let dump = args.output_dir.join("corpus.jsonl");
    std::fs::write(&dump, sample::documents_to_jsonl(&docs))?;
    let lex = args.output_dir.join("sample_lexicon.tsv");
    std::fs::write(&lex, sample::SAMPLE_LEXICON_TSV)?;
    println!("wrote {} documents to {}", docs.len(), dump.display());
    println!("wrote sample lexicon to {}", lex.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate_lexicon(settings: &Settings, args: &ValidateLexiconArgs) -> Result<ExitCode> {
    let path = settings.lexicon_path(&args.lexicon)?;
    let file = std::fs::File::open(&path)
        .with_context(|| format!("cannot open lexicon {}", path.display()))?;
    // Load leniently so every violation can be listed, not just the first.
    let options = LoadOptions { containment_as_warning: true, ..LoadOptions::default() };
    let lexicon = load_lexicon(file, LexiconFormat::Tsv, options)?;
    let violations = validate_lexicon(&lexicon);
    if violations.is_empty() {
        println!("ok: {} entries", lexicon.len());
        return Ok(ExitCode::SUCCESS);
    }
    for v in &violations {
        let entry = lexicon.entry(v.entry_id);
        let contained = lexicon.entry(v.contained_entry_id);
        println!(
            "containment: replacement {:?} of {:?} contains phrase {:?}",
            entry.replacements[v.replacement_index].join(" "),
            entry.illiterate_text(),
            contained.illiterate_text(),
        );
    }
    println!("{} violations in {} entries", violations.len(), lexicon.len());
    Ok(ExitCode::FAILURE)
}

fn cmd_build_corpus(settings: &Settings, args: &BuildCorpusArgs) -> Result<ExitCode> {
    let input = args
        .input
        .clone()
        .or_else(|| settings.file.corpus.dump.clone())
        .context("no input dump: pass --input or set `corpus.dump`")?;
    let output = args
        .output
        .clone()
        .or_else(|| settings.file.corpus.snippets.clone())
        .context("no output file: pass --output or set `corpus.snippets`")?;
    let lexicon = load_lexicon_file(&settings.lexicon_path(&args.lexicon)?)?;
    let min_words = args
        .min_words
        .or(settings.file.min_words)
        .unwrap_or(corpus::DEFAULT_MIN_WORDS);

    let mut reader = ingest_path(&input, IngestOptions { skip_bad: args.skip_bad })?;
    let mut docs = Vec::new();
    for doc in &mut reader {
        docs.push(doc?);
    }
    if reader.skipped > 0 {
        eprintln!("skipped {} malformed lines", reader.skipped);
    }
    if reader.unknown_sites > 0 {
        eprintln!("{} documents had unknown source sites (mapped to Other)", reader.unknown_sites);
    }
    if reader.empty_bodies > 0 {
        eprintln!("dropped {} documents with empty bodies", reader.empty_bodies);
    }
    let doc_count = docs.len();
    let snippets: Vec<SnippetRecord> = filter_snippets(docs, &lexicon, min_words).collect();
    write_snippets(&snippets, &output)?;
    println!("{} documents -> {} snippets -> {}", doc_count, snippets.len(), output.display());
    print!("{}", corpus::snippet_stats(&snippets, &lexicon).render_text());
    Ok(ExitCode::SUCCESS)
}

fn cmd_make_silver(settings: &Settings, args: &MakeSilverArgs) -> Result<ExitCode> {
    let snippets_path = args
        .snippets
        .clone()
        .or_else(|| settings.file.corpus.snippets.clone())
        .context("no snippets file: pass --snippets or set `corpus.snippets`")?;
    let output_dir = args
        .output_dir
        .clone()
        .or_else(|| settings.file.corpus.pairs_dir.clone())
        .context("no output dir: pass --output-dir or set `corpus.pairs_dir`")?;
    let lexicon = load_lexicon_file(&settings.lexicon_path(&args.lexicon)?)?;
    let snippets = read_snippets(&snippets_path)?;

    let polish_spec: Option<Vec<String>> = args
        .polish
        .as_ref()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .or_else(|| settings.file.corpus.polish.clone());
    let polish: Box<dyn Polish> = match polish_spec.filter(|parts| !parts.is_empty()) {
        Some(parts) => Box::new(CommandPolish {
            command: parts[0].clone(),
            args: parts[1..].to_vec(),
        }),
        None => Box::new(IdentityPolish),
    };

    let pairs = make_silver(&snippets, &lexicon, settings.seed, polish.as_ref())?;
    write_parallel(&pairs, &output_dir)?;
    println!("{} pairs -> {}", pairs.len(), output_dir.display());
    let src = pair_stats(&pairs, &lexicon, PairSide::Source);
    let tgt = pair_stats(&pairs, &lexicon, PairSide::Target);
    println!("mean source HIR {:.3}, mean target HIR {:.3}", src.average_hir, tgt.average_hir);
    Ok(ExitCode::SUCCESS)
}

fn cmd_split(settings: &Settings, args: &SplitArgs) -> Result<ExitCode> {
    let pairs_dir = args
        .pairs_dir
        .clone()
        .or_else(|| settings.file.corpus.pairs_dir.clone())
        .context("no pairs dir: pass --pairs-dir or set `corpus.pairs_dir`")?;
    let fraction = args
        .train_fraction
        .or(settings.file.corpus.train_fraction)
        .unwrap_or(0.86);
    let pairs = read_parallel(&pairs_dir)?;
    let split = split_corpus(pairs, SplitSpec { train_fraction: fraction, seed: settings.seed })?;
    write_parallel(&split.train, &args.train_dir)?;
    write_parallel(&split.valid, &args.valid_dir)?;
    println!(
        "{} train -> {}, {} valid -> {}",
        split.train.len(),
        args.train_dir.display(),
        split.valid.len(),
        args.valid_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(settings: &Settings, args: &TrainArgs) -> Result<ExitCode> {
    let pairs = read_parallel(&args.train_dir)?;
    if pairs.is_empty() {
        bail!("training dataset {} is empty", args.train_dir.display());
    }
    let min_frequency = args.min_frequency.or(settings.file.train.min_frequency).unwrap_or(1);
    let max_vocab = args.max_vocab.or(settings.file.train.max_vocab).unwrap_or(50_000);
    let vocab = build_vocab(&pairs, min_frequency, max_vocab)?;
    let model_config = settings.model_config(args);
    let train_config = settings.train_config(args);

    eprintln!(
        "training on {} pairs, vocab {}, {} steps",
        pairs.len(),
        vocab.size(),
        train_config.steps
    );
    let (checkpoint, trace) = nmt::train(&pairs, &vocab, &model_config, &train_config)?;
    checkpoint.save(&args.checkpoint)?;
    if let Some(trace_path) = &args.loss_trace {
        std::fs::write(trace_path, trace_to_csv(&trace))?;
    }
    println!(
        "final loss {:.6} after {} steps -> {}",
        checkpoint.final_loss,
        checkpoint.step,
        args.checkpoint.display()
    );

    if let Some(valid_dir) = &args.valid_dir {
        let valid = read_parallel(valid_dir)?;
        if valid.is_empty() {
            eprintln!("validation dataset {} is empty; skipping", valid_dir.display());
        } else {
            let (examples, truncated) = encode_pairs(&valid, &vocab, &model_config)?;
            if truncated > 0 {
                eprintln!("{truncated} validation sequences truncated");
            }
            let loss = nmt::batch_loss(&checkpoint.params, &examples)?;
            println!("validation loss {loss:.6} over {} pairs", valid.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_translate(settings: &Settings, args: &TranslateArgs) -> Result<ExitCode> {
    let _ = settings;
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let mode = match args.beam {
        Some(width) => DecodeMode::Beam(width),
        None => DecodeMode::Greedy,
    };
    let max_len = args.max_len.unwrap_or(checkpoint.config.max_target_len);

    let lines: Vec<String> = match (&args.sentence, &args.input) {
        (Some(sentence), None) => vec![sentence.clone()],
        (None, Some(path)) => std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?
            .lines()
            .map(str::to_string)
            .collect(),
        (None, None) => bail!("pass --sentence or --input"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };

    let translations = hlt_core::exec::try_map_indexed(&lines, |i, line| {
        translate(&checkpoint, &Sentence::new(line.clone()), mode, max_len)
            .with_context(|| format!("line {}", i + 1))
    })?;

    let mut empties = 0usize;
    let mut out = String::new();
    for t in &translations {
        if t.empty {
            empties += 1;
        }
        out.push_str(t.sentence.raw());
        out.push('\n');
    }
    if empties > 0 {
        eprintln!("{empties} empty translations (EOS predicted first)");
    }
    match &args.output {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn read_sentence_lines(path: &Path) -> Result<Vec<Sentence>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(|l| Sentence::new(l.to_string())).collect())
}

fn format_p(p: f64) -> String {
    if p >= 1e-4 {
        format!("{p:.6}")
    } else {
        format!("{p:.6e}")
    }
}

fn cmd_evaluate(settings: &Settings, args: &EvaluateArgs) -> Result<ExitCode> {
    let _ = settings;
    if !args.name.is_empty() && args.name.len() != args.hyp.len() {
        bail!("{} --name values for {} --hyp files", args.name.len(), args.hyp.len());
    }
    let refs = read_sentence_lines(&args.reference)?;
    for (i, r) in refs.iter().enumerate() {
        if r.word_count() == 0 {
            bail!("reference line {} has no word tokens", i + 1);
        }
    }

    let mut rows = Vec::new();
    let mut corpus_rows = Vec::new();
    let mut score_lists = Vec::new();
    for (hi, hyp_path) in args.hyp.iter().enumerate() {
        let hyps = read_sentence_lines(hyp_path)?;
        if hyps.len() != refs.len() {
            bail!(
                "{} has {} lines; reference has {}",
                hyp_path.display(),
                hyps.len(),
                refs.len()
            );
        }
        let name = args
            .name
            .get(hi)
            .cloned()
            .unwrap_or_else(|| {
                hyp_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(
                    || hyp_path.display().to_string(),
                )
            });
        let scores = hlt_core::exec::try_map_indexed(&hyps, |i, hyp| {
            sentence_bleu(hyp, &refs[i], Smoothing::AddOneHigherOrder)
                .map(|r| r.score)
                .with_context(|| format!("{} line {}", hyp_path.display(), i + 1))
        })?;
        rows.push((name.clone(), summarize(&scores)?));
        corpus_rows.push((name, corpus_bleu(&hyps, &refs)?.score));
        score_lists.push(scores);
    }

    match args.format {
        ReportFormat::Csv => print!("{}", render_score_csv(&rows)),
        ReportFormat::Text => {
            print!("{}", render_score_table(&rows));
            for (name, summary) in &rows {
                println!("{name}: {}", interpret_bleu(summary.mean)?);
            }
            for (name, score) in &corpus_rows {
                println!("corpus BLEU ({name}): {score:.3}");
            }
            if let [a, b] = &score_lists[..] {
                let t = paired_t_test(a, b)?;
                let flag = if t.degenerate { " (degenerate)" } else { "" };
                println!("t={:.4}, df={}, p={}{}", t.t, t.df, format_p(t.p), flag);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Stage spec: NAME=DIR (source side), NAME=DIR:tgt, NAME=DIR:src, or
/// NAME=FILE@DIR (sentences from FILE, sites line-aligned from DIR's meta).
fn parse_stage(spec: &str) -> Result<(String, Vec<(SourceSite, Sentence)>)> {
    let (name, rest) = spec
        .split_once('=')
        .with_context(|| format!("stage {spec:?} is not NAME=PATH"))?;
    if let Some((file, dir)) = rest.split_once('@') {
        let sentences = read_sentence_lines(Path::new(file))?;
        let pairs = read_parallel(Path::new(dir))?;
        if sentences.len() != pairs.len() {
            bail!(
                "stage {name}: {file} has {} lines but {dir} has {} pairs",
                sentences.len(),
                pairs.len()
            );
        }
        return Ok((
            name.to_string(),
            pairs.iter().map(|p| p.source_site).zip(sentences).collect(),
        ));
    }
    let (dir, side) = match rest.rsplit_once(':') {
        Some((dir, "src")) => (dir, PairSide::Source),
        Some((dir, "tgt")) => (dir, PairSide::Target),
        Some((_, other)) => bail!("stage {name}: unknown side {other:?} (use src or tgt)"),
        None => (rest, PairSide::Source),
    };
    let pairs = read_parallel(Path::new(dir))?;
    let items = pairs
        .into_iter()
        .map(|p| {
            let sentence = match side {
                PairSide::Source => p.source,
                PairSide::Target => p.target,
            };
            (p.source_site, sentence)
        })
        .collect();
    Ok((name.to_string(), items))
}

fn cmd_hir_report(settings: &Settings, args: &HirReportArgs) -> Result<ExitCode> {
    let lexicon = load_lexicon_file(&settings.lexicon_path(&args.lexicon)?)?;
    let stages = args
        .stage
        .iter()
        .map(|spec| parse_stage(spec))
        .collect::<Result<Vec<_>>>()?;
    let report = hir_report(&stages, &lexicon);
    match args.format {
        ReportFormat::Text => print!("{}", report.render_text()),
        ReportFormat::Csv => print!("{}", report.render_csv()),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(settings: &Settings, args: &GradcheckArgs) -> Result<ExitCode> {
    if args.vocab <= 4 {
        bail!("--vocab must exceed the 4 special tokens");
    }
    if args.pairs == 0 {
        bail!("--pairs must be at least 1");
    }
    let config = ModelConfig {
        embed_dim: args.embed_dim,
        hidden_dim: args.hidden_dim,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(config, args.vocab, settings.seed);
    let mut rng = SplitMix64::new(settings.seed ^ 0x5eed);
    let word = |rng: &mut SplitMix64| 4 + rng.bounded(args.vocab - 4);
    let batch: Vec<PairIds> = (0..args.pairs)
        .map(|_| {
            let src: Vec<usize> = (0..3 + rng.bounded(3)).map(|_| word(&mut rng)).collect();
            let mut tgt = vec![nmt::BOS];
            tgt.extend((0..2 + rng.bounded(3)).map(|_| word(&mut rng)));
            tgt.push(nmt::EOS);
            PairIds { src, tgt }
        })
        .collect();
    let report = gradient_check(&params, &batch, args.epsilon)?;
    print!("{}", report.render_text());
    let max = report.max_error();
    println!("max relative error {max:.3e} (threshold {:.3e})", args.threshold);
    if max < args.threshold {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}
