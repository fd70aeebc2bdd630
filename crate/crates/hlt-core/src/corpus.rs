//! Dataset plumbing: ingest scraped document dumps, filter to eligible
//! sentence snippets, generate the silver-standard parallel corpus, split it,
//! and persist everything to disk.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{find_matches, hir, substitute, Lexicon, LexiconError, MatchSpan};
use crate::rng::{mix_seed, SplitMix64};
use crate::text::{detokenize, split_sentences, strip_markup, Sentence};

pub const DEFAULT_MIN_WORDS: usize = 5;

/// Where a document was scraped from. Unknown names map to `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceSite {
    MayoClinic,
    MedlinePlus,
    Drugs,
    Reddit,
    Other,
}

impl SourceSite {
    /// Reporting order used by every per-site table.
    pub const ALL: [SourceSite; 5] = [
        SourceSite::MayoClinic,
        SourceSite::MedlinePlus,
        SourceSite::Drugs,
        SourceSite::Reddit,
        SourceSite::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SourceSite::MayoClinic => "MayoClinic.org",
            SourceSite::MedlinePlus => "MedlinePlus.gov",
            SourceSite::Drugs => "Drugs.com",
            SourceSite::Reddit => "Reddit.com",
            SourceSite::Other => "Other",
        }
    }

    /// Parses a dump's site name; the flag is false when the name was unknown
    /// and fell back to `Other`.
    pub fn parse(name: &str) -> (SourceSite, bool) {
        match name.to_lowercase().as_str() {
            "mayoclinic" => (SourceSite::MayoClinic, true),
            "medlineplus" => (SourceSite::MedlinePlus, true),
            "drugs" => (SourceSite::Drugs, true),
            "reddit" => (SourceSite::Reddit, true),
            "other" => (SourceSite::Other, true),
            _ => (SourceSite::Other, false),
        }
    }
}

/// One scraped document, body already passed through [`strip_markup`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub source_site: SourceSite,
    pub title: String,
    pub body: String,
    pub fetched_at: Option<String>,
}

/// A sentence that survived filtering: long enough, link-free, and containing
/// at least one lexicon match.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetRecord {
    pub sentence: Sentence,
    pub doc_id: String,
    pub source_site: SourceSite,
    pub match_count: usize,
}

/// One silver-standard pair: the original sentence and the same sentence with
/// a single phrase substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
    pub doc_id: String,
    pub source_site: SourceSite,
    pub entry_id: usize,
    pub span: MatchSpan,
    pub replacement_index: usize,
    pub rng_seed_used: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<SentencePair>,
    pub valid: Vec<SentencePair>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("snippet {index} has no lexicon matches")]
    ZeroMatches { index: usize },
    #[error("snippet {index}: source and target identical after polish")]
    IdenticalPair { index: usize },
    #[error("polish command `{command}` {detail}")]
    PolishCommand { command: String, detail: String },
    #[error("polish command `{command}` wrote {actual} lines for {expected} inputs")]
    PolishLineCount { command: String, expected: usize, actual: usize },
    #[error("cannot split {n} pairs; need at least 2")]
    TooFewPairs { n: usize },
    #[error("train fraction {fraction} outside (0, 1)")]
    InvalidFraction { fraction: f64 },
    #[error("dataset corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Debug, Deserialize)]
struct RawDocument {
    id: String,
    source_site: String,
    title: String,
    body: String,
    #[serde(default)]
    fetched_at: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Skip malformed lines (counted) instead of failing fast.
    pub skip_bad: bool,
}

/// Streaming JSONL document reader. Counters are valid once iteration ends.
pub struct Ingest<R: BufRead> {
    lines: std::io::Lines<R>,
    lineno: usize,
    options: IngestOptions,
    /// Malformed lines skipped under `skip_bad`.
    pub skipped: usize,
    /// Documents whose `source_site` was unknown and mapped to `Other`.
    pub unknown_sites: usize,
    /// Documents dropped because the body was empty once markup was stripped.
    pub empty_bodies: usize,
}

impl<R: BufRead> Iterator for Ingest<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.lineno += 1;
            let raw: RawDocument = match serde_json::from_str(&line) {
                Ok(raw) => raw,
                Err(e) => {
                    if self.options.skip_bad {
                        self.skipped += 1;
                        continue;
                    }
                    return Some(Err(CorpusError::MalformedLine {
                        line: self.lineno,
                        message: e.to_string(),
                    }));
                }
            };
            let (site, known) = SourceSite::parse(&raw.source_site);
            if !known {
                self.unknown_sites += 1;
            }
            let body = strip_markup(&raw.body);
            if body.is_empty() {
                self.empty_bodies += 1;
                continue;
            }
            return Some(Ok(Document {
                id: raw.id,
                source_site: site,
                title: raw.title,
                body,
                fetched_at: raw.fetched_at,
            }));
        }
    }
}

pub fn ingest<R: std::io::Read>(reader: R, options: IngestOptions) -> Ingest<std::io::BufReader<R>> {
    Ingest {
        lines: std::io::BufReader::new(reader).lines(),
        lineno: 0,
        options,
        skipped: 0,
        unknown_sites: 0,
        empty_bodies: 0,
    }
}

pub fn ingest_path(
    path: impl AsRef<Path>,
    options: IngestOptions,
) -> Result<Ingest<std::io::BufReader<std::fs::File>>, CorpusError> {
    Ok(ingest(std::fs::File::open(path)?, options))
}

fn has_hyperlink(raw: &str) -> bool {
    raw.contains("http://")
        || raw.contains("https://")
        || raw.split_whitespace().any(|seg| seg.to_lowercase().starts_with("www."))
}

/// Split each document into sentences and keep those with at least
/// `min_words` word tokens, no hyperlink, and at least one lexicon match.
pub fn filter_snippets<'a>(
    docs: impl IntoIterator<Item = Document> + 'a,
    lexicon: &'a Lexicon,
    min_words: usize,
) -> impl Iterator<Item = SnippetRecord> + 'a {
    docs.into_iter().flat_map(move |doc| {
        split_sentences(&doc.body)
            .into_iter()
            .filter_map(|sentence| {
                if sentence.word_count() < min_words || has_hyperlink(sentence.raw()) {
                    return None;
                }
                let match_count = find_matches(&sentence, lexicon).len();
                if match_count == 0 {
                    return None;
                }
                Some(SnippetRecord {
                    sentence,
                    doc_id: doc.id.clone(),
                    source_site: doc.source_site,
                    match_count,
                })
            })
            .collect::<Vec<_>>()
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SnippetLine {
    sentence: String,
    doc_id: String,
    source_site: SourceSite,
    match_count: usize,
}

/// Persist filtered snippets as JSONL, one record per line.
pub fn write_snippets(
    snippets: &[SnippetRecord],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in snippets {
        let line = SnippetLine {
            sentence: s.sentence.raw().to_string(),
            doc_id: s.doc_id.clone(),
            source_site: s.source_site,
            match_count: s.match_count,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("snippet is serializable"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_snippets(path: impl AsRef<Path>) -> Result<Vec<SnippetRecord>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let mut snippets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let raw: SnippetLine = serde_json::from_str(line).map_err(|e| {
            CorpusError::MalformedLine { line: i + 1, message: e.to_string() }
        })?;
        snippets.push(SnippetRecord {
            sentence: Sentence::new(raw.sentence),
            doc_id: raw.doc_id,
            source_site: raw.source_site,
            match_count: raw.match_count,
        });
    }
    Ok(snippets)
}

/// Grammar-polish hook applied to substituted sentences before they become
/// silver targets. The default is identity.
pub trait Polish {
    fn polish_batch(&self, lines: &[String]) -> Result<Vec<String>, CorpusError>;
}

pub struct IdentityPolish;

impl Polish for IdentityPolish {
    fn polish_batch(&self, lines: &[String]) -> Result<Vec<String>, CorpusError> {
        Ok(lines.to_vec())
    }
}

/// Shells out to an external command that reads one sentence per line on
/// stdin and writes one polished sentence per line on stdout.
pub struct CommandPolish {
    pub command: String,
    pub args: Vec<String>,
}

impl Polish for CommandPolish {
    fn polish_batch(&self, lines: &[String]) -> Result<Vec<String>, CorpusError> {
        use std::process::{Command, Stdio};
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| CorpusError::PolishCommand {
                command: self.command.clone(),
                detail: format!("failed to start: {e}"),
            })?;

        let mut input = String::new();
        for line in lines {
            input.push_str(line);
            input.push('\n');
        }
        // Writer runs on its own thread so a pipe-buffer-filling child
        // cannot deadlock against our stdout read.
        let mut stdin = child.stdin.take().expect("stdin piped");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));

        let output = child.wait_with_output().map_err(|e| CorpusError::PolishCommand {
            command: self.command.clone(),
            detail: format!("wait failed: {e}"),
        })?;
        let write_result = writer.join().expect("polish writer thread panicked");
        if let Err(e) = write_result {
            // A child that exits early without reading produces EPIPE here;
            // the status check below reports the real failure.
            if e.kind() != std::io::ErrorKind::BrokenPipe {
                return Err(CorpusError::PolishCommand {
                    command: self.command.clone(),
                    detail: format!("write failed: {e}"),
                });
            }
        }
        if !output.status.success() {
            return Err(CorpusError::PolishCommand {
                command: self.command.clone(),
                detail: format!("exited with {}", output.status),
            });
        }
        let text = String::from_utf8(output.stdout).map_err(|_| CorpusError::PolishCommand {
            command: self.command.clone(),
            detail: "wrote invalid UTF-8".to_string(),
        })?;
        let polished: Vec<String> = text.lines().map(str::to_string).collect();
        if polished.len() != lines.len() {
            return Err(CorpusError::PolishLineCount {
                command: self.command.clone(),
                expected: lines.len(),
                actual: polished.len(),
            });
        }
        Ok(polished)
    }
}

/// Build the silver-standard corpus: for each snippet, substitute exactly one
/// uniformly chosen match with a uniformly chosen replacement, then polish.
///
/// Snippet `i` draws from a generator seeded with `mix_seed(global_seed, i)`,
/// so output is a pure function of the inputs regardless of execution order.
pub fn make_silver(
    snippets: &[SnippetRecord],
    lexicon: &Lexicon,
    global_seed: u64,
    polish: &dyn Polish,
) -> Result<Vec<SentencePair>, CorpusError> {
    struct Substituted {
        target_raw: String,
        entry_id: usize,
        span: MatchSpan,
        replacement_index: usize,
        rng_seed_used: u64,
    }

    let substituted: Vec<Substituted> =
        crate::exec::try_map_indexed(snippets, |i, snippet| -> Result<Substituted, CorpusError> {
            let matches = find_matches(&snippet.sentence, lexicon);
            if matches.is_empty() {
                return Err(CorpusError::ZeroMatches { index: i });
            }
            let seed = mix_seed(global_seed, i as u64);
            let mut rng = SplitMix64::new(seed);
            let span = matches[rng.bounded(matches.len())];
            let entry = lexicon.entry(span.entry_id);
            let replacement_index = rng.bounded(entry.replacements.len());
            let target = substitute(&snippet.sentence, &span, &entry.replacements[replacement_index])?;
            Ok(Substituted {
                target_raw: target.raw().to_string(),
                entry_id: span.entry_id,
                span,
                replacement_index,
                rng_seed_used: seed,
            })
        })?;

    let raws: Vec<String> = substituted.iter().map(|s| s.target_raw.clone()).collect();
    let polished = polish.polish_batch(&raws)?;

    let mut pairs = Vec::with_capacity(snippets.len());
    for (i, (snippet, sub)) in snippets.iter().zip(substituted).enumerate() {
        let target = Sentence::new(polished[i].clone());
        if target.raw() == snippet.sentence.raw() {
            return Err(CorpusError::IdenticalPair { index: i });
        }
        pairs.push(SentencePair {
            source: snippet.sentence.clone(),
            target,
            doc_id: snippet.doc_id.clone(),
            source_site: snippet.source_site,
            entry_id: sub.entry_id,
            span: sub.span,
            replacement_index: sub.replacement_index,
            rng_seed_used: sub.rng_seed_used,
        });
    }
    Ok(pairs)
}

/// Train/valid sizes for a seeded prefix split: `round(train_fraction * n)`.
pub fn split_sizes(n: usize, train_fraction: f64) -> (usize, usize) {
    let train = (train_fraction * n as f64).round() as usize;
    (train, n - train)
}

/// Deterministic shuffle by `spec.seed`, then prefix split.
pub fn split_corpus(mut pairs: Vec<SentencePair>, spec: SplitSpec) -> Result<Split, CorpusError> {
    if pairs.len() < 2 {
        return Err(CorpusError::TooFewPairs { n: pairs.len() });
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction { fraction: spec.train_fraction });
    }
    let (train_count, _) = split_sizes(pairs.len(), spec.train_fraction);
    SplitMix64::new(spec.seed).shuffle(&mut pairs);
    let valid = pairs.split_off(train_count.min(pairs.len()));
    Ok(Split { train: pairs, valid })
}

#[derive(Debug, Serialize, Deserialize)]
struct PairMeta {
    doc_id: String,
    source_site: SourceSite,
    entry_id: usize,
    span: MatchSpan,
    replacement_index: usize,
    rng_seed_used: u64,
}

/// Persist pairs as `src.txt` + `tgt.txt` (one detokenized sentence per line)
/// and `meta.jsonl` (one metadata object per pair), all UTF-8 with LF.
pub fn write_parallel(pairs: &[SentencePair], dir: impl AsRef<Path>) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut src = std::io::BufWriter::new(std::fs::File::create(dir.join("src.txt"))?);
    let mut tgt = std::io::BufWriter::new(std::fs::File::create(dir.join("tgt.txt"))?);
    let mut meta = std::io::BufWriter::new(std::fs::File::create(dir.join("meta.jsonl"))?);
    for pair in pairs {
        writeln!(src, "{}", detokenize(pair.source.tokens()))?;
        writeln!(tgt, "{}", detokenize(pair.target.tokens()))?;
        let record = PairMeta {
            doc_id: pair.doc_id.clone(),
            source_site: pair.source_site,
            entry_id: pair.entry_id,
            span: pair.span,
            replacement_index: pair.replacement_index,
            rng_seed_used: pair.rng_seed_used,
        };
        writeln!(meta, "{}", serde_json::to_string(&record).expect("meta is serializable"))?;
    }
    src.flush()?;
    tgt.flush()?;
    meta.flush()?;
    Ok(())
}

pub fn read_parallel(dir: impl AsRef<Path>) -> Result<Vec<SentencePair>, CorpusError> {
    let dir = dir.as_ref();
    let read_lines = |name: &str| -> Result<Vec<String>, CorpusError> {
        let text = std::fs::read_to_string(dir.join(name))?;
        Ok(text.lines().map(str::to_string).collect())
    };
    let src = read_lines("src.txt")?;
    let tgt = read_lines("tgt.txt")?;
    let meta = read_lines("meta.jsonl")?;
    if src.len() != tgt.len() || src.len() != meta.len() {
        return Err(CorpusError::Corrupt(format!(
            "line counts differ: src.txt {}, tgt.txt {}, meta.jsonl {}",
            src.len(),
            tgt.len(),
            meta.len()
        )));
    }
    let mut pairs = Vec::with_capacity(src.len());
    for (i, ((s, t), m)) in src.into_iter().zip(tgt).zip(meta).enumerate() {
        let record: PairMeta = serde_json::from_str(&m).map_err(|e| {
            CorpusError::Corrupt(format!("meta.jsonl line {}: {}", i + 1, e))
        })?;
        pairs.push(SentencePair {
            source: Sentence::new(s),
            target: Sentence::new(t),
            doc_id: record.doc_id,
            source_site: record.source_site,
            entry_id: record.entry_id,
            span: record.span,
            replacement_index: record.replacement_index,
            rng_seed_used: record.rng_seed_used,
        });
    }
    Ok(pairs)
}

/// Which sentence of a pair to measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSide {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteStats {
    pub site: SourceSite,
    pub count: usize,
    pub mean_hir: f64,
}

/// Per-site sentence counts and mean HIR, plus a pooled Average row.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub rows: Vec<SiteStats>,
    pub total_count: usize,
    pub average_hir: f64,
}

impl CorpusStats {
    fn from_observations(obs: impl IntoIterator<Item = (SourceSite, f64)>) -> CorpusStats {
        let mut sums: HashMap<SourceSite, (usize, f64)> = HashMap::new();
        let mut total = 0usize;
        let mut total_sum = 0.0;
        for (site, value) in obs {
            let entry = sums.entry(site).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += value;
            total += 1;
            total_sum += value;
        }
        let rows = SourceSite::ALL
            .iter()
            .filter_map(|site| {
                sums.get(site).map(|&(count, sum)| SiteStats {
                    site: *site,
                    count,
                    mean_hir: sum / count as f64,
                })
            })
            .collect();
        CorpusStats {
            rows,
            total_count: total,
            average_hir: if total == 0 { 0.0 } else { total_sum / total as f64 },
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<16} {:>10} {:>9}\n", "Source", "Sentences", "Mean HIR"));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>10} {:>9.3}\n",
                row.site.label(),
                row.count,
                row.mean_hir
            ));
        }
        out.push_str(&format!(
            "{:<16} {:>10} {:>9.3}\n",
            "Average", self.total_count, self.average_hir
        ));
        out
    }
}

/// Stats over filtered snippets. Zero-word sentences cannot occur here, but
/// are skipped defensively rather than failing the report.
pub fn snippet_stats(snippets: &[SnippetRecord], lexicon: &Lexicon) -> CorpusStats {
    CorpusStats::from_observations(snippets.iter().filter_map(|s| {
        hir(&s.sentence, lexicon).ok().map(|h| (s.source_site, h))
    }))
}

pub fn pair_stats(pairs: &[SentencePair], lexicon: &Lexicon, side: PairSide) -> CorpusStats {
    CorpusStats::from_observations(pairs.iter().filter_map(|p| {
        let sentence = match side {
            PairSide::Source => &p.source,
            PairSide::Target => &p.target,
        };
        hir(sentence, lexicon).ok().map(|h| (p.source_site, h))
    }))
}
