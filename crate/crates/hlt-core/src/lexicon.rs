//! The plain-language lexicon: load and validate the phrase thesaurus, locate
//! hard-to-read phrases in sentences, compute the health-illiterate rate, and
//! rewrite matched spans with their plain replacements.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

use crate::text::{normalize, slice_chars, Sentence};

/// One thesaurus mapping: a phrase readers stumble on and its plain-language
/// replacements. Both sides are stored as normalized word tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub id: usize,
    pub illiterate: Vec<String>,
    pub replacements: Vec<Vec<String>>,
}

impl LexiconEntry {
    pub fn illiterate_text(&self) -> String {
        self.illiterate.join(" ")
    }
}

/// A replacement that contains some entry's phrase, so substituting it could
/// leave (or introduce) matchable language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entry_id: usize,
    pub replacement_index: usize,
    pub contained_entry_id: usize,
}

/// A located phrase match. `token_start..token_end` index the sentence's
/// word-like tokens only (punctuation tokens do not count positions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MatchSpan {
    pub entry_id: usize,
    pub token_start: usize,
    pub token_end: usize,
}

impl MatchSpan {
    pub fn len(&self) -> usize {
        self.token_end - self.token_start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The validated thesaurus plus a first-token index for phrase scanning.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    // first normalized token -> entry ids, longest phrase first
    index: HashMap<String, Vec<usize>>,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("line {line}: expected 2 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: empty illiterate phrase")]
    EmptyPhrase { line: usize },
    #[error("line {line}: empty replacement for \"{phrase}\" (pass allow_empty_replacements to permit)")]
    EmptyReplacement { line: usize, phrase: String },
    #[error("line {line}: duplicate illiterate phrase \"{phrase}\"")]
    DuplicatePhrase { line: usize, phrase: String },
    #[error("line {line}: replacement equals the illiterate phrase \"{phrase}\"")]
    IdentityReplacement { line: usize, phrase: String },
    #[error("replacement containment: {0} violation(s); first: entry \"{1}\" replacement \"{2}\" contains entry \"{3}\"")]
    Containment(usize, String, String, String),
    #[error("i/o error reading lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("sentence has no word tokens")]
    NoWords,
    #[error("match span {start}..{end} out of range for sentence with {words} word tokens")]
    SpanOutOfRange { start: usize, end: usize, words: usize },
}

/// Loading knobs. Defaults: empty replacements rejected, containment
/// violations are hard errors.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub allow_empty_replacements: bool,
    /// Downgrade replacement-containment violations from error to "load
    /// anyway"; callers can still inspect them via [`validate_lexicon`].
    pub containment_as_warning: bool,
}

/// Supported lexicon file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconFormat {
    /// Two tab-separated columns: illiterate phrase, then replacements
    /// separated by `|`. Lines starting with `#` are comments.
    Tsv,
}

/// Parse, normalize, and validate a lexicon from a byte stream.
pub fn load_lexicon(
    source: impl std::io::Read,
    format: LexiconFormat,
    options: LoadOptions,
) -> Result<Lexicon, LexiconError> {
    let LexiconFormat::Tsv = format;
    let reader = std::io::BufReader::new(source);
    let mut entries: Vec<LexiconEntry> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 2 {
            return Err(LexiconError::ColumnCount { line: lineno, found: cols.len() });
        }
        let illiterate = phrase_tokens(cols[0]);
        if illiterate.is_empty() {
            return Err(LexiconError::EmptyPhrase { line: lineno });
        }
        let key = illiterate.join(" ");
        if seen.contains_key(&key) {
            return Err(LexiconError::DuplicatePhrase { line: lineno, phrase: key });
        }

        let mut replacements = Vec::new();
        for rep in cols[1].split('|') {
            let tokens = phrase_tokens(rep);
            if tokens.is_empty() && !options.allow_empty_replacements {
                return Err(LexiconError::EmptyReplacement { line: lineno, phrase: key.clone() });
            }
            if tokens == illiterate {
                return Err(LexiconError::IdentityReplacement { line: lineno, phrase: key.clone() });
            }
            replacements.push(tokens);
        }
        if replacements.is_empty() {
            return Err(LexiconError::EmptyReplacement { line: lineno, phrase: key.clone() });
        }

        let id = entries.len();
        seen.insert(key, id);
        entries.push(LexiconEntry { id, illiterate, replacements });
    }

    let lexicon = Lexicon::from_entries(entries);
    let violations = validate_lexicon(&lexicon);
    if !violations.is_empty() && !options.containment_as_warning {
        let v = &violations[0];
        let entry = &lexicon.entries[v.entry_id];
        return Err(LexiconError::Containment(
            violations.len(),
            entry.illiterate_text(),
            entry.replacements[v.replacement_index].join(" "),
            lexicon.entries[v.contained_entry_id].illiterate_text(),
        ));
    }
    Ok(lexicon)
}

/// Normalized word-like tokens of a lexicon phrase; punctuation is dropped.
fn phrase_tokens(text: &str) -> Vec<String> {
    crate::text::tokenize(text)
        .iter()
        .filter(|t| t.is_word_like())
        .map(|t| normalize(&t.text))
        .collect()
}

impl Lexicon {
    pub fn from_entries(entries: Vec<LexiconEntry>) -> Self {
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for entry in &entries {
            index.entry(entry.illiterate[0].clone()).or_default().push(entry.id);
        }
        // Longest phrase first so the scan's first hit is the longest match.
        // Id is the tiebreak, though equal-length duplicates cannot load.
        for ids in index.values_mut() {
            ids.sort_by_key(|&id| (std::cmp::Reverse(entries[id].illiterate.len()), id));
        }
        Self { entries, index }
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &LexiconEntry {
        &self.entries[id]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Every (entry, replacement, contained entry) triple where the replacement
/// contains some entry's phrase as a contiguous token subsequence. An empty
/// result means substitutions can never leave matchable language behind.
pub fn validate_lexicon(lexicon: &Lexicon) -> Vec<Violation> {
    let mut violations = Vec::new();
    for entry in &lexicon.entries {
        for (rep_idx, rep) in entry.replacements.iter().enumerate() {
            for other in &lexicon.entries {
                if contains_subsequence(rep, &other.illiterate) {
                    violations.push(Violation {
                        entry_id: entry.id,
                        replacement_index: rep_idx,
                        contained_entry_id: other.id,
                    });
                }
            }
        }
    }
    violations
}

fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// Leftmost-longest non-overlapping phrase matches over the sentence's
/// word-like tokens. Matching is case-insensitive; a phrase cannot span a
/// punctuation token.
pub fn find_matches(sentence: &Sentence, lexicon: &Lexicon) -> Vec<MatchSpan> {
    let words = sentence.normalized_words();
    let runs = punctuation_runs(sentence);
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < words.len() {
        let mut matched = None;
        if let Some(candidates) = lexicon.index.get(&words[pos]) {
            for &id in candidates {
                let phrase = &lexicon.entries[id].illiterate;
                let end = pos + phrase.len();
                if end <= words.len()
                    && runs[end - 1] == runs[pos]
                    && words[pos..end] == phrase[..]
                {
                    matched = Some(MatchSpan { entry_id: id, token_start: pos, token_end: end });
                    break;
                }
            }
        }
        match matched {
            Some(span) => {
                pos = span.token_end;
                spans.push(span);
            }
            None => pos += 1,
        }
    }
    spans
}

/// Run id per word-like token; two word tokens share a run iff no punctuation
/// token sits between them.
fn punctuation_runs(sentence: &Sentence) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut run = 0;
    let mut prev_was_word = false;
    for token in sentence.tokens() {
        if token.is_word_like() {
            runs.push(run);
            prev_was_word = true;
        } else {
            if prev_was_word {
                run += 1;
            }
            prev_was_word = false;
        }
    }
    runs
}

/// Health-illiterate rate: word tokens covered by matches over total word
/// tokens, in `[0, 1]`.
pub fn hir(sentence: &Sentence, lexicon: &Lexicon) -> Result<f64, LexiconError> {
    let total = sentence.word_count();
    if total == 0 {
        return Err(LexiconError::NoWords);
    }
    let covered: usize = find_matches(sentence, lexicon).iter().map(MatchSpan::len).sum();
    Ok(covered as f64 / total as f64)
}

/// Replace a matched span's word tokens with `replacement` tokens.
///
/// Inserted tokens are joined by single spaces; punctuation and spacing
/// around the span are untouched. If the span opens the sentence and the
/// original first word was capitalized, the replacement's first token is
/// capitalized too.
pub fn substitute(
    sentence: &Sentence,
    span: &MatchSpan,
    replacement: &[String],
) -> Result<Sentence, LexiconError> {
    let word_tokens: Vec<&crate::text::Token> = sentence.word_tokens().collect();
    if span.token_start >= span.token_end || span.token_end > word_tokens.len() {
        return Err(LexiconError::SpanOutOfRange {
            start: span.token_start,
            end: span.token_end,
            words: word_tokens.len(),
        });
    }

    let first = word_tokens[span.token_start];
    let last = word_tokens[span.token_end - 1];

    let mut inserted = replacement.join(" ");
    let sentence_initial = span.token_start == 0;
    let was_capitalized = first.text.chars().next().is_some_and(|c| c.is_uppercase());
    if sentence_initial && was_capitalized {
        inserted = capitalize_first(&inserted);
    }

    let raw = sentence.raw();
    let char_len = raw.chars().count();
    let mut out = slice_chars(raw, 0, first.span.start);
    out.push_str(&inserted);
    out.push_str(&slice_chars(raw, last.span.end, char_len));
    Ok(Sentence::new(out))
}

fn capitalize_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
