//! Parallel vs sequential throughput on the pipeline's data-parallel stages.
//! With default features `map_indexed` fans out over rayon; `map_indexed_seq`
//! is the always-sequential twin, so one build compares both paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use hlt_core::corpus::{filter_snippets, make_silver, IdentityPolish, SentencePair, SnippetRecord};
use hlt_core::eval::{sentence_bleu, Smoothing};
use hlt_core::exec::{map_indexed, map_indexed_seq};
use hlt_core::lexicon::{find_matches, hir, substitute, Lexicon};
use hlt_core::sample::{self, sample_lexicon};
use hlt_core::text::Sentence;

fn corpus(lexicon: &Lexicon) -> Vec<SnippetRecord> {
    filter_snippets(sample::documents(7), lexicon, 5).collect()
}

fn bench_hir_scoring(c: &mut Criterion) {
    let lexicon = sample_lexicon();
    let sentences: Vec<Sentence> =
        corpus(&lexicon).into_iter().map(|s| s.sentence).collect();
    let mut group = c.benchmark_group("hir_scoring");
    group.throughput(Throughput::Elements(sentences.len() as u64));
    group.bench_with_input(BenchmarkId::new("parallel", sentences.len()), &sentences, |b, s| {
        b.iter(|| map_indexed(s, |_, sentence| hir(sentence, &lexicon).unwrap()))
    });
    group.bench_with_input(BenchmarkId::new("sequential", sentences.len()), &sentences, |b, s| {
        b.iter(|| map_indexed_seq(s, |_, sentence| hir(sentence, &lexicon).unwrap()))
    });
    group.finish();
}

fn bench_substitution(c: &mut Criterion) {
    let lexicon = sample_lexicon();
    let snippets = corpus(&lexicon);
    let substitute_one = |snippet: &SnippetRecord| {
        let matches = find_matches(&snippet.sentence, &lexicon);
        let span = matches[0];
        let entry = lexicon.entry(span.entry_id);
        substitute(&snippet.sentence, &span, &entry.replacements[0]).unwrap()
    };
    let mut group = c.benchmark_group("substitution");
    group.throughput(Throughput::Elements(snippets.len() as u64));
    group.bench_with_input(BenchmarkId::new("parallel", snippets.len()), &snippets, |b, s| {
        b.iter(|| map_indexed(s, |_, snippet| substitute_one(snippet)))
    });
    group.bench_with_input(BenchmarkId::new("sequential", snippets.len()), &snippets, |b, s| {
        b.iter(|| map_indexed_seq(s, |_, snippet| substitute_one(snippet)))
    });
    group.finish();
}

fn bench_sentence_bleu(c: &mut Criterion) {
    let lexicon = sample_lexicon();
    let pairs: Vec<SentencePair> =
        make_silver(&corpus(&lexicon), &lexicon, 7, &IdentityPolish).unwrap();
    let score_one = |pair: &SentencePair| {
        sentence_bleu(&pair.source, &pair.target, Smoothing::AddOneHigherOrder).unwrap().score
    };
    let mut group = c.benchmark_group("sentence_bleu");
    group.throughput(Throughput::Elements(pairs.len() as u64));
    group.bench_with_input(BenchmarkId::new("parallel", pairs.len()), &pairs, |b, p| {
        b.iter(|| map_indexed(p, |_, pair| score_one(pair)))
    });
    group.bench_with_input(BenchmarkId::new("sequential", pairs.len()), &pairs, |b, p| {
        b.iter(|| map_indexed_seq(p, |_, pair| score_one(pair)))
    });
    group.finish();
}

criterion_group!(benches, bench_hir_scoring, bench_substitution, bench_sentence_bleu);
criterion_main!(benches);
