//! Bundled sample data: a curated lexicon and a generated document dump so
//! every pipeline stage runs offline. Generation is a pure function of the
//! seed.

use crate::corpus::{Document, SourceSite};
use crate::lexicon::{load_lexicon, Lexicon, LexiconFormat, LoadOptions};
use crate::rng::{mix_seed, SplitMix64};

pub const SAMPLE_LEXICON_TSV: &str = include_str!("../data/sample_lexicon.tsv");

/// The bundled lexicon. Validated at load, so this cannot fail.
pub fn sample_lexicon() -> Lexicon {
    load_lexicon(SAMPLE_LEXICON_TSV.as_bytes(), LexiconFormat::Tsv, LoadOptions::default())
        .expect("bundled sample lexicon is valid")
}

/// Sentence templates; `{}` receives a lexicon phrase.
const TEMPLATES: [&str; 12] = [
    "Your doctor said the {} may get worse without treatment.",
    "Many patients ask about {} during the first visit.",
    "The pamphlet explains {} in plain language.",
    "Nurses often mention {} when they review your chart.",
    "Ask the care team how {} affects daily life.",
    "People living with {} should rest and drink fluids.",
    "This page covers {} and the common warning signs.",
    "Research on {} continues at many large hospitals.",
    "Severe {} needs medical care right away.",
    "Mild {} can usually be watched at home.",
    "A second opinion about {} is always reasonable.",
    "The leaflet lists {} among the possible outcomes.",
];

/// Two-phrase templates so some snippets carry multiple matches.
const DOUBLE_TEMPLATES: [&str; 4] = [
    "The notes mention {} and also {} from last year.",
    "Watch for {} because {} can follow quickly.",
    "Both {} and {} appear in the discharge summary.",
    "Clinics track {} together with {} in most cases.",
];

/// Sentences that the snippet filter must drop, mixed into document bodies.
const JUNK: [&str; 7] = [
    "Overview.",
    "Key points to remember.",
    "Visit https://example.org/info for the full article.",
    "More tips at www.example-health.org every day.",
    "Drink plenty of water every single day.",
    "Take 2 tablets every 8 hours with food.",
    "Dr. Lee reviewed the notes yesterday afternoon.",
];

fn fill(template: &str, phrases: &[&str]) -> String {
    let mut out = String::with_capacity(template.len() + 32);
    let mut parts = template.split("{}");
    out.push_str(parts.next().unwrap_or(""));
    for (part, phrase) in parts.zip(phrases) {
        out.push_str(phrase);
        out.push_str(part);
    }
    out
}

/// Deterministic sample dump: 74 documents across all five sites whose
/// filtered snippets number well past 500. Bodies mix eligible sentences
/// with short titles, hyperlinks, match-free lines, and light markup.
pub fn documents(seed: u64) -> Vec<Document> {
    let lexicon = sample_lexicon();
    let phrases: Vec<String> =
        lexicon.entries().iter().map(|e| e.illiterate_text()).collect();

    let plan: [(SourceSite, &str, usize); 5] = [
        (SourceSite::MayoClinic, "mayo", 32),
        (SourceSite::Drugs, "drugs", 18),
        (SourceSite::Reddit, "reddit", 12),
        (SourceSite::MedlinePlus, "medline", 8),
        (SourceSite::Other, "other", 4),
    ];

    let mut docs = Vec::new();
    let mut doc_index = 0u64;
    for (site, slug, count) in plan {
        for k in 0..count {
            let mut rng = SplitMix64::new(mix_seed(seed, doc_index));
            doc_index += 1;

            let mut sentences: Vec<String> = Vec::new();
            let eligible = 7 + rng.bounded(3);
            for _ in 0..eligible {
                if rng.bounded(6) == 0 {
                    let t = DOUBLE_TEMPLATES[rng.bounded(DOUBLE_TEMPLATES.len())];
                    let a = &phrases[rng.bounded(phrases.len())];
                    let b = &phrases[rng.bounded(phrases.len())];
                    sentences.push(fill(t, &[a, b]));
                } else {
                    let t = TEMPLATES[rng.bounded(TEMPLATES.len())];
                    let p = &phrases[rng.bounded(phrases.len())];
                    sentences.push(fill(t, &[p]));
                }
            }
            for _ in 0..2 + rng.bounded(2) {
                sentences.push(JUNK[rng.bounded(JUNK.len())].to_string());
            }
            rng.shuffle(&mut sentences);

            docs.push(Document {
                id: format!("{slug}-{k:03}"),
                source_site: site,
                title: format!("Sample {slug} article {k}"),
                body: sentences.join(" "),
                fetched_at: None,
            });
        }
    }
    docs
}

/// Serialize documents to the JSONL dump schema that `ingest` reads. Every
/// fifth document per site gets paragraph markup so the dump exercises
/// stripping.
pub fn documents_to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        let site = match doc.source_site {
            SourceSite::MayoClinic => "mayoclinic",
            SourceSite::MedlinePlus => "medlineplus",
            SourceSite::Drugs => "drugs",
            SourceSite::Reddit => "reddit",
            SourceSite::Other => "other",
        };
        let ordinal: usize =
            doc.id.rsplit('-').next().and_then(|d| d.parse().ok()).unwrap_or(1);
        let body = if ordinal.is_multiple_of(5) {
            format!("<p>{}</p>", doc.body)
        } else {
            doc.body.clone()
        };
        let line = serde_json::json!({
            "id": doc.id,
            "source_site": site,
            "title": doc.title,
            "body": body,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{filter_snippets, ingest, IngestOptions, SnippetRecord};
    use crate::lexicon::validate_lexicon;

    #[test]
    fn bundled_lexicon_is_clean() {
        let lex = sample_lexicon();
        assert!(lex.len() >= 40);
        assert!(validate_lexicon(&lex).is_empty());
    }

    #[test]
    fn sample_corpus_yields_enough_snippets_per_site() {
        let lex = sample_lexicon();
        let docs = documents(7);
        let snippets: Vec<SnippetRecord> =
            filter_snippets(docs, &lex, crate::corpus::DEFAULT_MIN_WORDS).collect();
        assert!(snippets.len() >= 500, "only {} snippets", snippets.len());
        for site in SourceSite::ALL {
            let n = snippets.iter().filter(|s| s.source_site == site).count();
            assert!(n > 0, "{site:?} has no snippets");
        }
        assert!(snippets.iter().any(|s| s.match_count >= 2), "no multi-match snippet");
    }

    #[test]
    fn generation_is_seed_deterministic() {
        assert_eq!(documents(7), documents(7));
        assert_ne!(documents(7), documents(8));
    }

    #[test]
    fn jsonl_round_trips_through_ingest() {
        let docs = documents(3);
        let jsonl = documents_to_jsonl(&docs);
        let read: Vec<Document> = ingest(jsonl.as_bytes(), IngestOptions::default())
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(read.len(), docs.len());
        // Markup in the dump comes back out stripped.
        assert_eq!(read[0].id, docs[0].id);
        assert!(jsonl.contains("<p>"));
        for (r, d) in read.iter().zip(&docs) {
            assert_eq!(r.body, d.body, "body changed for {}", d.id);
        }
    }
}
