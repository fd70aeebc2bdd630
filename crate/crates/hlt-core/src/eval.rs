//! Evaluation: BLEU scoring with optional sentence-level smoothing,
//! percentile summaries, BLEU band interpretation, paired t-tests, and HIR
//! comparison grids.

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::SourceSite;
use crate::lexicon::{hir, Lexicon};
use crate::text::Sentence;

pub const MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    None,
    /// For n >= 2, when the clipped numerator is zero, score (num+1)/(den+1).
    /// Unigrams are never smoothed, so zero unigram overlap stays score 0.
    AddOneHigherOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuResult {
    pub score: f64,
    /// Precisions as used in the geometric mean, after any smoothing.
    pub precisions: [f64; MAX_N],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub empty_hypothesis: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSummary {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTestResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// All differences identical (zero sample variance); t is 0 or infinite.
    pub degenerate: bool,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pair {index}: reference has no word tokens")]
    EmptyReference { index: usize },
    #[error("hypothesis/reference counts differ: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("need at least one hypothesis/reference pair")]
    EmptyCorpus,
    #[error("score list is empty")]
    EmptyScores,
    #[error("BLEU score {score} outside [0, 100]")]
    ScoreOutOfRange { score: f64 },
    #[error("paired t-test needs equal-length samples with n >= 2; got {a} and {b}")]
    BadSamples { a: usize, b: usize },
}

/// Clipped n-gram numerator and hypothesis n-gram count for one order.
fn ngram_overlap(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_default() += 1;
    }
    let mut hyp_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in hyp.windows(n) {
        *hyp_counts.entry(gram).or_default() += 1;
    }
    let num = hyp_counts
        .iter()
        .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (num, hyp.len() - n + 1)
}

struct PairStats {
    counts: [(usize, usize); MAX_N],
    hyp_len: usize,
    ref_len: usize,
}

fn pair_stats(hyp: &Sentence, reference: &Sentence) -> PairStats {
    let h = hyp.normalized_words();
    let r = reference.normalized_words();
    let mut counts = [(0usize, 0usize); MAX_N];
    for (i, slot) in counts.iter_mut().enumerate() {
        *slot = ngram_overlap(&h, &r, i + 1);
    }
    PairStats { counts, hyp_len: h.len(), ref_len: r.len() }
}

fn combine(counts: [(usize, usize); MAX_N], c: usize, r: usize, smoothing: Smoothing) -> BleuResult {
    if c == 0 {
        return BleuResult {
            score: 0.0,
            precisions: [0.0; MAX_N],
            brevity_penalty: 0.0,
            hyp_len: 0,
            ref_len: r,
            empty_hypothesis: true,
        };
    }
    let mut precisions = [0.0; MAX_N];
    for (i, &(num, den)) in counts.iter().enumerate() {
        let (num, den) = match smoothing {
            Smoothing::AddOneHigherOrder if i >= 1 && num == 0 => (num + 1, den + 1),
            _ => (num, den),
        };
        precisions[i] = if den == 0 { 0.0 } else { num as f64 / den as f64 };
    }
    let brevity_penalty = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    // Zero unigram overlap means no overlap at all: score 0 regardless of
    // smoothing. Any other zero precision zeroes the geometric mean.
    let score = if counts[0].0 == 0 || precisions.contains(&0.0) {
        0.0
    } else {
        let log_sum: f64 = precisions.iter().map(|p| 0.25 * p.ln()).sum();
        100.0 * brevity_penalty * log_sum.exp()
    };
    BleuResult { score, precisions, brevity_penalty, hyp_len: c, ref_len: r, empty_hypothesis: false }
}

/// BLEU for one hypothesis against one reference. The reference must have at
/// least one word token. `AddOneHigherOrder` is the usual sentence-level
/// choice; an empty hypothesis scores 0 with brevity penalty 0, flagged.
pub fn sentence_bleu(
    hyp: &Sentence,
    reference: &Sentence,
    smoothing: Smoothing,
) -> Result<BleuResult, EvalError> {
    if reference.word_count() == 0 {
        return Err(EvalError::EmptyReference { index: 0 });
    }
    let stats = pair_stats(hyp, reference);
    Ok(combine(stats.counts, stats.hyp_len, stats.ref_len, smoothing))
}

/// Corpus BLEU: numerators, denominators, and lengths are summed over all
/// pairs before precisions and the brevity penalty are computed. Unsmoothed.
pub fn corpus_bleu(hyps: &[Sentence], refs: &[Sentence]) -> Result<BleuResult, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    for (i, r) in refs.iter().enumerate() {
        if r.word_count() == 0 {
            return Err(EvalError::EmptyReference { index: i });
        }
    }
    let per_pair = crate::exec::map_indexed(hyps, |i, hyp| pair_stats(hyp, &refs[i]));
    let mut counts = [(0usize, 0usize); MAX_N];
    let mut c = 0;
    let mut r = 0;
    for stats in per_pair {
        for (slot, (num, den)) in counts.iter_mut().zip(stats.counts) {
            slot.0 += num;
            slot.1 += den;
        }
        c += stats.hyp_len;
        r += stats.ref_len;
    }
    Ok(combine(counts, c, r, Smoothing::None))
}

/// Percentiles by linear interpolation between closest ranks (inclusive
/// method, rank = q * (n - 1)) plus the arithmetic mean.
pub fn summarize(scores: &[f64]) -> Result<ScoreSummary, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores must not contain NaN"));
    let percentile = |q: f64| -> f64 {
        let rank = q * (sorted.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    };
    Ok(ScoreSummary {
        p25: percentile(0.25),
        p50: percentile(0.50),
        p75: percentile(0.75),
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
    })
}

/// Interpretation band for a BLEU score in [0, 100]. Bands are half-open at
/// the printed boundaries, so 40 falls in the upper band.
pub fn interpret_bleu(score: f64) -> Result<&'static str, EvalError> {
    if !(0.0..=100.0).contains(&score) {
        return Err(EvalError::ScoreOutOfRange { score });
    }
    Ok(match score {
        s if s < 10.0 => "Almost useless",
        s if s < 20.0 => "Hard to get the gist",
        s if s < 30.0 => "The gist is clear, but has significant grammatical errors",
        s if s < 40.0 => "Understandable to good translations",
        s if s < 50.0 => "High quality translations",
        s if s < 60.0 => "Very high quality, adequate, and fluent translations",
        _ => "Quality often better than human",
    })
}

/// Two-sided paired t-test. The p-value comes from the Student-t CDF via the
/// regularized incomplete beta function. With zero sample variance the result
/// is flagged degenerate: p = 1 when the mean difference is zero, else p = 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTestResult, EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::BadSamples { a: a.len(), b: b.len() });
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTestResult { t: 0.0, df, p: 1.0, degenerate: true }
        } else {
            PairedTTestResult { t: f64::INFINITY * mean.signum(), df, p: 0.0, degenerate: true }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dff = df as f64;
    let p = reg_inc_beta(dff / 2.0, 0.5, dff / (dff + t * t));
    Ok(PairedTTestResult { t, df, p, degenerate: false })
}

/// ln Γ(x) for x > 0 (Lanczos approximation, g = 7, n = 9).
#[allow(clippy::excessive_precision)] // published coefficients, kept verbatim
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta function I_x(a, b) by continued fraction.
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
            + a * x.ln()
            + b * (1.0 - x).ln())
        .exp() * betacf(b, a, 1.0 - x)
            / b
    }
}

/// Lentz continued-fraction evaluation for the incomplete beta function.
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3.0e-16;
    const FPMIN: f64 = 1.0e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// HIR grid: one row per source site seen in any stage, one column per stage,
/// plus a pooled Average row. Cells are `None` where a (site, stage) has no
/// sentences; zero-word sentences are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct HirReport {
    pub stage_names: Vec<String>,
    pub site_rows: Vec<(SourceSite, Vec<Option<f64>>)>,
    pub average_row: Vec<Option<f64>>,
}

pub fn hir_report(
    stages: &[(String, Vec<(SourceSite, Sentence)>)],
    lexicon: &Lexicon,
) -> HirReport {
    let mut per_site: HashMap<SourceSite, Vec<(f64, usize)>> = HashMap::new();
    let mut pooled: Vec<(f64, usize)> = vec![(0.0, 0); stages.len()];

    for (col, (_, sentences)) in stages.iter().enumerate() {
        for (site, sentence) in sentences {
            let Ok(value) = hir(sentence, lexicon) else { continue };
            let cells = per_site.entry(*site).or_insert_with(|| vec![(0.0, 0); stages.len()]);
            cells[col].0 += value;
            cells[col].1 += 1;
            pooled[col].0 += value;
            pooled[col].1 += 1;
        }
    }

    let mean = |(sum, count): (f64, usize)| if count == 0 { None } else { Some(sum / count as f64) };
    let site_rows = SourceSite::ALL
        .iter()
        .filter_map(|site| {
            per_site
                .get(site)
                .map(|cells| (*site, cells.iter().map(|&c| mean(c)).collect()))
        })
        .collect();
    HirReport {
        stage_names: stages.iter().map(|(name, _)| name.clone()).collect(),
        site_rows,
        average_row: pooled.into_iter().map(mean).collect(),
    }
}

fn format_cell(cell: Option<f64>) -> String {
    match cell {
        Some(v) => format!("{v:.3}"),
        None => "–".to_string(),
    }
}

impl HirReport {
    pub fn render_text(&self) -> String {
        let label_width = self
            .site_rows
            .iter()
            .map(|(site, _)| site.label().len())
            .chain(["Data Source".len(), "Average".len()])
            .max()
            .unwrap_or(11);
        let widths: Vec<usize> = self.stage_names.iter().map(|n| n.len().max(6)).collect();

        let mut out = format!("{:<label_width$}", "Data Source");
        for (name, w) in self.stage_names.iter().zip(&widths) {
            out.push_str(&format!("  {name:>w$}"));
        }
        out.push('\n');
        let mut push_row = |label: &str, cells: &[Option<f64>]| {
            let mut row = format!("{label:<label_width$}");
            for (&cell, w) in cells.iter().zip(&widths) {
                row.push_str(&format!("  {:>w$}", format_cell(cell)));
            }
            row.push('\n');
            out.push_str(&row);
        };
        for (site, cells) in &self.site_rows {
            push_row(site.label(), cells);
        }
        push_row("Average", &self.average_row);
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("Data Source");
        for name in &self.stage_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        let mut push_row = |label: &str, cells: &[Option<f64>]| {
            let mut row = label.to_string();
            for &cell in cells {
                row.push(',');
                if let Some(v) = cell {
                    row.push_str(&format!("{v:.3}"));
                }
            }
            row.push('\n');
            out.push_str(&row);
        };
        for (site, cells) in &self.site_rows {
            push_row(site.label(), cells);
        }
        push_row("Average", &self.average_row);
        out
    }
}

const SCORE_COLUMNS: [&str; 4] = ["25th Percentile", "50th Percentile", "75th Percentile", "Mean"];

/// One summary row per model, in the percentile/mean column order.
pub fn render_score_table(rows: &[(String, ScoreSummary)]) -> String {
    let label_width = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(["Model".len()])
        .max()
        .unwrap_or(5);
    let mut out = format!("{:<label_width$}", "Model");
    for col in SCORE_COLUMNS {
        out.push_str(&format!("  {col:>15}"));
    }
    out.push('\n');
    for (name, s) in rows {
        out.push_str(&format!(
            "{name:<label_width$}  {:>15.3}  {:>15.3}  {:>15.3}  {:>15.3}\n",
            s.p25, s.p50, s.p75, s.mean
        ));
    }
    out
}

pub fn render_score_csv(rows: &[(String, ScoreSummary)]) -> String {
    let mut out = format!("Model,{}\n", SCORE_COLUMNS.join(","));
    for (name, s) in rows {
        out.push_str(&format!("{name},{:.3},{:.3},{:.3},{:.3}\n", s.p25, s.p50, s.p75, s.mean));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{load_lexicon, LexiconFormat, LoadOptions};

    fn s(text: &str) -> Sentence {
        Sentence::new(text)
    }

    fn rel_close(actual: f64, expected: f64) -> bool {
        (actual - expected).abs() <= 1e-9 * expected.abs().max(1.0)
    }

    #[test]
    fn bleu_identical_is_100() {
        let r = sentence_bleu(
            &s("The risk of stroke rises with age."),
            &s("The risk of stroke rises with age."),
            Smoothing::AddOneHigherOrder,
        )
        .unwrap();
        assert_eq!(r.score, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn bleu_disjoint_is_zero() {
        let r = sentence_bleu(
            &s("alpha beta gamma delta"),
            &s("one two three four"),
            Smoothing::AddOneHigherOrder,
        )
        .unwrap();
        assert_eq!(r.score, 0.0);
    }

    // Independently computed by enumerating n-grams and clipped counts by
    // hand: p = (5/6, 4/5, 3/4, 2/3), BP = exp(1 - 7/6).
    #[test]
    fn bleu_six_vs_seven_word_fixture() {
        let hyp = s("risk of stroke rises with age");
        let reference = s("chance of stroke rises with age quickly");
        for smoothing in [Smoothing::None, Smoothing::AddOneHigherOrder] {
            let r = sentence_bleu(&hyp, &reference, smoothing).unwrap();
            assert!(rel_close(r.score, 64.31870218238025), "got {}", r.score);
        }
    }

    #[test]
    fn bleu_smoothing_fills_zero_higher_orders() {
        let r = sentence_bleu(&s("risk stroke age"), &s("risk age stroke"), Smoothing::AddOneHigherOrder)
            .unwrap();
        assert!(rel_close(r.score, 63.89431042462724), "got {}", r.score);
        assert_eq!(r.precisions[0], 1.0);
        assert_eq!(r.precisions[1], 1.0 / 3.0);
        assert_eq!(r.precisions[2], 0.5);
        assert_eq!(r.precisions[3], 1.0);
    }

    #[test]
    fn bleu_unsmoothed_zero_higher_order_is_zero() {
        let r = sentence_bleu(&s("risk stroke age"), &s("risk age stroke"), Smoothing::None).unwrap();
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn bleu_empty_hypothesis_flagged() {
        let r = sentence_bleu(&s("..."), &s("a reference"), Smoothing::AddOneHigherOrder).unwrap();
        assert_eq!(r.score, 0.0);
        assert_eq!(r.brevity_penalty, 0.0);
        assert!(r.empty_hypothesis);
    }

    #[test]
    fn bleu_empty_reference_is_error() {
        assert!(matches!(
            sentence_bleu(&s("words here"), &s("!!!"), Smoothing::None),
            Err(EvalError::EmptyReference { .. })
        ));
    }

    #[test]
    fn bleu_brevity_penalty_direction() {
        let reference = s("one two three four five six");
        let long = sentence_bleu(&s("one two three four five six seven"), &reference, Smoothing::None)
            .unwrap();
        assert_eq!(long.brevity_penalty, 1.0);
        let short = sentence_bleu(&s("one two three"), &reference, Smoothing::AddOneHigherOrder)
            .unwrap();
        let shorter = sentence_bleu(&s("one two"), &reference, Smoothing::AddOneHigherOrder).unwrap();
        assert!(short.brevity_penalty < 1.0);
        assert!(shorter.brevity_penalty < short.brevity_penalty);
    }

    #[test]
    fn corpus_bleu_identical_pairs() {
        let hyps = vec![s("a b c d"), s("e f g h")];
        let r = corpus_bleu(&hyps, &hyps.clone()).unwrap();
        assert_eq!(r.score, 100.0);
    }

    #[test]
    fn corpus_bleu_single_pair_equals_unsmoothed_sentence() {
        let hyp = s("risk of stroke rises with age");
        let reference = s("chance of stroke rises with age quickly");
        let corpus =
            corpus_bleu(std::slice::from_ref(&hyp), std::slice::from_ref(&reference)).unwrap();
        let single = sentence_bleu(&hyp, &reference, Smoothing::None).unwrap();
        assert_eq!(corpus.score, single.score);
        assert_eq!(corpus.precisions, single.precisions);
    }

    // Two-pair value from the same hand enumeration, pooling counts first.
    #[test]
    fn corpus_bleu_two_pair_fixture() {
        let hyps = vec![s("risk of stroke rises with age"), s("the dose was too high for him")];
        let refs = vec![
            s("chance of stroke rises with age quickly"),
            s("the dose was far too high for him"),
        ];
        let r = corpus_bleu(&hyps, &refs).unwrap();
        assert!(rel_close(r.score, 58.437332412316906), "got {}", r.score);
    }

    #[test]
    fn corpus_bleu_rejects_mismatch_and_empty() {
        assert!(matches!(
            corpus_bleu(&[s("a")], &[]),
            Err(EvalError::LengthMismatch { hyps: 1, refs: 0 })
        ));
        assert!(matches!(corpus_bleu(&[], &[]), Err(EvalError::EmptyCorpus)));
    }

    #[test]
    fn summarize_interpolates_median() {
        let r = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.p50, 2.5);
        assert_eq!(r.p25, 1.75);
        assert_eq!(r.p75, 3.25);
        assert_eq!(r.mean, 2.5);
    }

    #[test]
    fn summarize_constant_list() {
        let r = summarize(&[7.5; 9]).unwrap();
        assert_eq!((r.p25, r.p50, r.p75, r.mean), (7.5, 7.5, 7.5, 7.5));
    }

    #[test]
    fn summarize_is_permutation_invariant() {
        let a = summarize(&[3.0, 1.0, 4.0, 1.5, 9.0, 2.6]).unwrap();
        let b = summarize(&[9.0, 1.0, 2.6, 4.0, 1.5, 3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn summarize_rejects_empty() {
        assert!(matches!(summarize(&[]), Err(EvalError::EmptyScores)));
    }

    #[test]
    fn interpret_bands() {
        assert_eq!(interpret_bleu(41.578).unwrap(), "High quality translations");
        assert_eq!(interpret_bleu(5.0).unwrap(), "Almost useless");
        assert_eq!(interpret_bleu(0.0).unwrap(), "Almost useless");
        assert_eq!(interpret_bleu(10.0).unwrap(), "Hard to get the gist");
        assert_eq!(
            interpret_bleu(25.0).unwrap(),
            "The gist is clear, but has significant grammatical errors"
        );
        assert_eq!(interpret_bleu(30.0).unwrap(), "Understandable to good translations");
        assert_eq!(interpret_bleu(40.0).unwrap(), "High quality translations");
        assert_eq!(
            interpret_bleu(50.0).unwrap(),
            "Very high quality, adequate, and fluent translations"
        );
        assert_eq!(interpret_bleu(60.0).unwrap(), "Quality often better than human");
        assert_eq!(interpret_bleu(100.0).unwrap(), "Quality often better than human");
    }

    #[test]
    fn interpret_rejects_out_of_range() {
        assert!(interpret_bleu(-0.001).is_err());
        assert!(interpret_bleu(100.001).is_err());
    }

    // Frozen from a numerical integration of the t density (adaptive Simpson
    // over a rational substitution), independent of ln_gamma/betacf.
    #[test]
    fn t_test_matches_quadrature_oracle() {
        let fixtures: [(&[f64], &[f64], f64, f64); 3] = [
            (
                &[12.1, 14.3, 11.8, 15.2, 13.9, 12.7, 14.8, 13.1, 12.4, 15.0],
                &[11.2, 13.1, 12.0, 14.1, 12.8, 11.9, 13.6, 12.2, 11.7, 14.2],
                6.573125593387461,
                1.0239809932782535e-4,
            ),
            (
                &[41.5, 38.2, 45.1, 39.9, 42.3, 44.0, 37.8, 40.6, 43.2, 41.0],
                &[40.9, 38.8, 44.2, 40.5, 41.7, 43.1, 38.5, 40.0, 42.6, 41.3],
                0.9534625892455937,
                0.3652602981606896,
            ),
            (
                &[2.5, 3.1, 2.8, 3.4, 2.9, 3.0, 2.6, 3.3, 2.7, 3.2],
                &[3.5, 2.9, 3.8, 2.6, 3.9, 2.8, 3.6, 2.7, 3.7, 3.0],
                -1.2456821978060997,
                0.24433314386748353,
            ),
        ];
        for (a, b, want_t, want_p) in fixtures {
            let r = paired_t_test(a, b).unwrap();
            assert!((r.t - want_t).abs() < 1e-12, "t {} vs {}", r.t, want_t);
            assert!((r.p - want_p).abs() < 1e-6, "p {} vs {}", r.p, want_p);
            assert_eq!(r.df, 9);
            assert!(!r.degenerate);
        }
    }

    #[test]
    fn t_test_equal_samples_degenerate() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!(r.p, 1.0);
        assert_eq!(r.t, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn t_test_constant_nonzero_difference_degenerate() {
        let a = [2.0, 3.0, 4.0];
        let b = [1.0, 2.0, 3.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert_eq!(r.p, 0.0);
        assert!(r.t.is_infinite() && r.t > 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn t_test_is_antisymmetric() {
        let a = [12.1, 14.3, 11.8, 15.2, 13.9];
        let b = [11.2, 13.1, 12.0, 14.1, 12.8];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn t_test_p_decreases_in_t_magnitude() {
        // Fixed spread, growing mean difference: t = mean/(sd/sqrt(n)) rises
        // linearly, so p must fall strictly.
        let spread = [1.0, -1.0, 2.0, -2.0, 0.0, 0.0];
        let b = [0.0; 6];
        let mut last = f64::INFINITY;
        for shift in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let a: Vec<f64> = spread.iter().map(|e| e + shift).collect();
            let r = paired_t_test(&a, &b).unwrap();
            assert!(r.p < last, "p {} did not fall below {}", r.p, last);
            last = r.p;
        }
    }

    #[test]
    fn t_test_rejects_bad_samples() {
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn lex() -> Lexicon {
        load_lexicon("risk\tchance\n".as_bytes(), LexiconFormat::Tsv, LoadOptions::default())
            .unwrap()
    }

    #[test]
    fn hir_report_single_fully_matched_word() {
        let stages = vec![("stage-a".to_string(), vec![(SourceSite::Drugs, s("risk"))])];
        let report = hir_report(&stages, &lex());
        assert_eq!(report.site_rows.len(), 1);
        assert_eq!(report.site_rows[0].1[0], Some(1.0));
        assert_eq!(report.average_row[0], Some(1.0));
        assert!(report.render_text().contains("1.000"));
    }

    #[test]
    fn hir_report_match_free_column_is_zero() {
        let stages = vec![(
            "out".to_string(),
            vec![
                (SourceSite::MedlinePlus, s("all plain words here")),
                (SourceSite::MedlinePlus, s("more plain words")),
            ],
        )];
        let report = hir_report(&stages, &lex());
        assert_eq!(report.site_rows[0].1[0], Some(0.0));
        assert!(report.render_text().contains("0.000"));
    }

    #[test]
    fn hir_report_missing_cell_renders_dash() {
        let stages = vec![
            ("a".to_string(), vec![(SourceSite::Reddit, s("risk of harm"))]),
            ("b".to_string(), vec![(SourceSite::MayoClinic, s("plain words"))]),
        ];
        let report = hir_report(&stages, &lex());
        // Reddit has no sentences in stage b, MayoClinic none in stage a.
        let reddit = report.site_rows.iter().find(|(site, _)| *site == SourceSite::Reddit).unwrap();
        assert_eq!(reddit.1[1], None);
        assert!(report.render_text().contains('–'));
        let csv = report.render_csv();
        assert!(csv.starts_with("Data Source,a,b\n"));
    }

    #[test]
    fn hir_report_average_is_pooled() {
        let stages = vec![(
            "a".to_string(),
            vec![
                // 1/1 and 0/3: pooled mean over sentences = 0.5, not site-mean.
                (SourceSite::Drugs, s("risk")),
                (SourceSite::Reddit, s("calm blue sky")),
            ],
        )];
        let report = hir_report(&stages, &lex());
        assert_eq!(report.average_row[0], Some(0.5));
    }

    #[test]
    fn hir_report_cells_match_direct_means() {
        let lexicon = lex();
        let sentences =
            [s("the risk is real"), s("risk and more risk today"), s("no trouble at all")];
        let direct: f64 = sentences.iter().map(|x| hir(x, &lexicon).unwrap()).sum::<f64>() / 3.0;
        let stages = vec![(
            "a".to_string(),
            sentences.iter().map(|x| (SourceSite::Other, x.clone())).collect(),
        )];
        let report = hir_report(&stages, &lexicon);
        assert!((report.site_rows[0].1[0].unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn score_table_renders_column_order() {
        let rows = vec![(
            "BiLSTM".to_string(),
            ScoreSummary { p25: 25.363, p50: 40.221, p75: 56.140, mean: 41.578 },
        )];
        let text = render_score_table(&rows);
        let header = text.lines().next().unwrap();
        assert!(header.contains("Model"));
        let cols: Vec<usize> = ["25th Percentile", "50th Percentile", "75th Percentile", "Mean"]
            .iter()
            .map(|c| header.find(c).expect("column present"))
            .collect();
        assert!(cols.windows(2).all(|w| w[0] < w[1]), "columns out of order");
        assert!(text.contains("41.578"));
        let csv = render_score_csv(&rows);
        assert!(csv.starts_with("Model,25th Percentile,50th Percentile,75th Percentile,Mean\n"));
        assert!(csv.contains("BiLSTM,25.363,40.221,56.140,41.578"));
    }
}
