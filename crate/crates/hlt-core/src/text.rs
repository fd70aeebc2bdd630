//! Tokenization, sentence segmentation, normalization, and markup stripping.
//!
//! Every other module counts words, matches phrases, and scores n-grams on
//! top of this tokenizer, so there is exactly one definition of "word" in the
//! crate: a maximal run of letters/digits, possibly containing internal
//! apostrophes or hyphens. Offsets are character offsets (not bytes) into the
//! raw sentence, 0-based and end-exclusive.

use unicode_normalization::UnicodeNormalization;

/// What a token is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word,
    Number,
    Punctuation,
}

/// One token of a sentence. `span` indexes characters of the raw sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    pub span: Span,
}

impl Token {
    /// Word-like tokens are the unit for phrase matching, HIR, and BLEU.
    pub fn is_word_like(&self) -> bool {
        matches!(self.kind, TokenKind::Word | TokenKind::Number)
    }
}

/// Character offsets `[start, end)` into a sentence's raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

/// A sentence plus its tokenization. Constructed only through [`Sentence::new`],
/// so `tokens` is always exactly `tokenize(raw)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    raw: String,
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        Self { raw, tokens }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Tokens of kind word or number, in order.
    pub fn word_tokens(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.is_word_like())
    }

    pub fn word_count(&self) -> usize {
        self.word_tokens().count()
    }

    /// Normalized texts of the word-like tokens.
    pub fn normalized_words(&self) -> Vec<String> {
        self.word_tokens().map(|t| normalize(&t.text)).collect()
    }
}

/// True for characters that may appear inside a word token.
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Apostrophes and hyphens join a word when flanked by word characters.
fn is_word_joiner(c: char) -> bool {
    c == '\'' || c == '-' || c == '\u{2019}'
}

/// Split text into tokens. Every non-whitespace character lands in exactly
/// one token; a word is a maximal run of letters/digits with internal
/// apostrophes/hyphens; any other non-whitespace character is a one-character
/// punctuation token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_word_char(c) {
            let start = i;
            let mut end = i + 1;
            loop {
                if end < chars.len() && is_word_char(chars[end]) {
                    end += 1;
                } else if end < chars.len()
                    && is_word_joiner(chars[end])
                    && end + 1 < chars.len()
                    && is_word_char(chars[end + 1])
                {
                    // Internal joiner: consume it and the following word char.
                    end += 2;
                } else {
                    break;
                }
            }
            let text: String = chars[start..end].iter().collect();
            let kind = if text.chars().all(|c| c.is_numeric()) {
                TokenKind::Number
            } else {
                TokenKind::Word
            };
            tokens.push(Token {
                text,
                kind,
                span: Span { start, end },
            });
            i = end;
        } else {
            tokens.push(Token {
                text: c.to_string(),
                kind: TokenKind::Punctuation,
                span: Span { start: i, end: i + 1 },
            });
            i += 1;
        }
    }
    tokens
}

/// Case-fold and composition-normalize a token for matching and counting.
/// Idempotent: `normalize(normalize(x)) == normalize(x)`.
pub fn normalize(token_text: &str) -> String {
    token_text.to_lowercase().nfc().collect()
}

/// Sentence splitter with an abbreviation guard list.
///
/// A sentence boundary is a `.`, `!`, or `?` followed by whitespace and an
/// uppercase letter, or by end of text. A `.` is suppressed when the text
/// before it ends with a guarded abbreviation ("Dr", "e.g", ...) at a word
/// boundary; the comparison is case-insensitive.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: Vec<String>,
}

pub const DEFAULT_ABBREVIATIONS: &[&str] = &["Dr", "Mr", "Mrs", "Ms", "e.g", "i.e", "vs"];

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::new(DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()))
    }
}

impl SentenceSplitter {
    pub fn new(abbreviations: impl IntoIterator<Item = String>) -> Self {
        Self {
            abbreviations: abbreviations
                .into_iter()
                .map(|a| a.to_lowercase())
                .collect(),
        }
    }

    /// Load a guard list from plain text: one entry per line, `#` comments.
    pub fn from_list_text(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.to_string()),
        )
    }

    pub fn split(&self, text: &str) -> Vec<Sentence> {
        let chars: Vec<char> = text.chars().collect();
        let mut sentences = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if (c == '.' || c == '!' || c == '?') && self.is_boundary(&chars, i) {
                push_trimmed(&mut sentences, &chars[start..=i]);
                start = i + 1;
            }
            i += 1;
        }
        if start < chars.len() {
            push_trimmed(&mut sentences, &chars[start..]);
        }
        sentences
    }

    fn is_boundary(&self, chars: &[char], i: usize) -> bool {
        if chars[i] == '.' && self.is_guarded(chars, i) {
            return false;
        }
        // End of text (possibly after trailing whitespace) terminates.
        let mut j = i + 1;
        if j == chars.len() {
            return true;
        }
        if !chars[j].is_whitespace() {
            return false;
        }
        while j < chars.len() && chars[j].is_whitespace() {
            j += 1;
        }
        j == chars.len() || chars[j].is_uppercase()
    }

    fn is_guarded(&self, chars: &[char], period: usize) -> bool {
        for abbr in &self.abbreviations {
            let alen = abbr.chars().count();
            if alen > period {
                continue;
            }
            let candidate: String = chars[period - alen..period]
                .iter()
                .collect::<String>()
                .to_lowercase();
            if candidate == *abbr {
                // Must start at a word boundary, not inside a longer word.
                let before = period - alen;
                if before == 0 || !is_word_char(chars[before - 1]) {
                    return true;
                }
            }
        }
        false
    }
}

fn push_trimmed(sentences: &mut Vec<Sentence>, chars: &[char]) {
    let raw: String = chars.iter().collect();
    let trimmed = raw.trim();
    if !trimmed.is_empty() {
        sentences.push(Sentence::new(trimmed));
    }
}

/// Split with the default abbreviation list.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    SentenceSplitter::default().split(text)
}

/// Strip tag-like regions and decode character entities from scraped text.
///
/// Tags (`<...>`) are replaced by a space so block boundaries stay word
/// boundaries; a `<` with no closing `>` is kept as literal text. The five
/// standard named entities and numeric entities are decoded; anything else
/// stays literal. Whitespace runs collapse to single spaces and the result is
/// trimmed.
pub fn strip_markup(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut no_tags = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '<' {
            match chars[i + 1..].iter().position(|&c| c == '>') {
                Some(offset) => {
                    no_tags.push(' ');
                    i += offset + 2;
                }
                None => {
                    // Unbalanced '<' at end of input: literal text.
                    no_tags.push('<');
                    i += 1;
                }
            }
        } else {
            no_tags.push(chars[i]);
            i += 1;
        }
    }

    let decoded = decode_entities(&no_tags);

    let mut out = String::with_capacity(decoded.len());
    let mut last_was_space = false;
    for c in decoded.chars() {
        if c.is_whitespace() {
            if !last_was_space {
                out.push(' ');
                last_was_space = true;
            }
        } else {
            out.push(c);
            last_was_space = false;
        }
    }
    out.trim().to_string()
}

fn decode_entities(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '&' {
            if let Some(semi) = chars[i + 1..].iter().take(12).position(|&c| c == ';') {
                let name: String = chars[i + 1..i + 1 + semi].iter().collect();
                if let Some(decoded) = decode_entity_name(&name) {
                    out.push(decoded);
                    i += semi + 2;
                    continue;
                }
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    out
}

fn decode_entity_name(name: &str) -> Option<char> {
    match name {
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        _ => {
            let code = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok()?
            } else {
                name.strip_prefix('#')?.parse::<u32>().ok()?
            };
            char::from_u32(code)
        }
    }
}

/// Render tokens back to text: single space between tokens, no space before
/// punctuation. This is the stable written form for dataset files and
/// translation output.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        if i > 0 && tok.kind != TokenKind::Punctuation {
            out.push(' ');
        }
        out.push_str(&tok.text);
    }
    out
}

/// Substring of `text` by character offsets.
pub fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_apostrophes_and_words() {
        let tokens = tokenize("The test can't detect all cancers.");
        assert_eq!(tokens.len(), 7);
        let words: Vec<&str> = tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Word)
            .map(|t| t.text.as_str())
            .collect();
        assert_eq!(words, vec!["The", "test", "can't", "detect", "all", "cancers"]);
        assert_eq!(tokens[6].text, ".");
        assert_eq!(tokens[6].kind, TokenKind::Punctuation);
    }

    #[test]
    fn tokenize_internal_hyphen() {
        let tokens = tokenize("risk-free");
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens[0].text, "risk-free");
        assert_eq!(tokens[0].kind, TokenKind::Word);
    }

    #[test]
    fn tokenize_edge_hyphens_are_punctuation() {
        let tokens = tokenize("-risk free-");
        let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["-", "risk", "free", "-"]);
    }

    #[test]
    fn tokenize_numbers() {
        let tokens = tokenize("take 2 pills");
        assert_eq!(tokens[1].kind, TokenKind::Number);
        assert_eq!(tokens[0].kind, TokenKind::Word);
    }

    #[test]
    fn tokenize_spans_match_raw() {
        let raw = "Your  risk is \tlowained-x.";
        for tok in tokenize(raw) {
            assert_eq!(slice_chars(raw, tok.span.start, tok.span.end), tok.text);
        }
    }

    #[test]
    fn normalize_folds_case() {
        assert_eq!(normalize("Risk"), "risk");
        assert_eq!(normalize("risk"), "risk");
        assert_eq!(normalize("CAN'T"), "can't");
    }

    #[test]
    fn normalize_idempotent() {
        for s in ["Risk", "CAN'T", "éTUDE", "Straße", "café"] {
            assert_eq!(normalize(&normalize(s)), normalize(s));
        }
    }

    #[test]
    fn split_two_short_sentences() {
        let sents = split_sentences("A. B.");
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].raw(), "A.");
        assert_eq!(sents[1].raw(), "B.");
    }

    #[test]
    fn split_no_terminator() {
        let sents = split_sentences("One sentence only");
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].raw(), "One sentence only");
    }

    #[test]
    fn split_abbreviation_guard() {
        let sents = split_sentences("See Dr. Smith. Then rest.");
        assert_eq!(sents.len(), 2);
        assert_eq!(sents[0].raw(), "See Dr. Smith.");
        assert_eq!(sents[1].raw(), "Then rest.");
    }

    #[test]
    fn split_guard_needs_word_boundary() {
        // "cedr" ends with "dr" but inside a word, so the period splits.
        let sents = split_sentences("Under the cedr. Next one.");
        assert_eq!(sents.len(), 2);
    }

    #[test]
    fn split_lowercase_continuation_does_not_split() {
        let sents = split_sentences("It rose 2.5 percent. then fell");
        // Period before "then" (lowercase) is not a boundary.
        assert_eq!(sents.len(), 1);
    }

    #[test]
    fn split_latin_abbreviations() {
        let sents = split_sentences("Avoid triggers, e.g. Pollen. Stay indoors.");
        assert_eq!(sents.len(), 2);
    }

    #[test]
    fn split_never_drops_characters() {
        let text = "First one!  Second one? The Dr. said so. tail";
        let sents = split_sentences(text);
        let joined: String = sents.iter().map(|s| s.raw()).collect();
        let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        assert_eq!(strip(&joined), strip(text));
    }

    #[test]
    fn strip_markup_tags_and_entities() {
        assert_eq!(strip_markup("<p>hello</p>"), "hello");
        assert_eq!(strip_markup("a &amp; b"), "a & b");
        assert_eq!(strip_markup("x  <b>y</b>\n z"), "x y z");
    }

    #[test]
    fn strip_markup_unbalanced_angle() {
        assert_eq!(strip_markup("a < b"), "a < b");
        assert_eq!(strip_markup("trailing <"), "trailing <");
    }

    #[test]
    fn strip_markup_numeric_entities() {
        assert_eq!(strip_markup("&#65;&#x42;"), "AB");
        assert_eq!(strip_markup("&#xZZ; stays"), "&#xZZ; stays");
        assert_eq!(strip_markup("&nbsp; stays"), "&nbsp; stays");
    }

    #[test]
    fn strip_markup_tag_acts_as_separator() {
        assert_eq!(strip_markup("end.</p><p>Next"), "end. Next");
    }

    #[test]
    fn detokenize_no_space_before_punctuation() {
        let s = Sentence::new("The test can't detect all cancers.");
        assert_eq!(detokenize(s.tokens()), "The test can't detect all cancers.");
        let s2 = Sentence::new("wait , what ?");
        assert_eq!(detokenize(s2.tokens()), "wait, what?");
    }

    #[test]
    fn word_count_excludes_punctuation() {
        let s = Sentence::new("Your risk is low.");
        assert_eq!(s.word_count(), 4);
        assert_eq!(s.tokens().len(), 5);
    }
}
