//! A small bidirectional-LSTM encoder, attention, LSTM-decoder translation
//! model with hand-written backpropagation, trained with Adam. Everything is
//! f64 and deterministic for a fixed seed.

// The math kernels walk several buffers at matched offsets; indexed loops
// keep them aligned with the equations.
#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SentencePair;
use crate::rng::{mix_seed, SplitMix64};
use crate::text::Sentence;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error)]
pub enum NmtError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("max_size {max_size} cannot fit the 4 special tokens plus any word")]
    BadVocabSize { max_size: usize },
    #[error("source sentence has no word tokens")]
    ZeroLengthSource,
    #[error("target needs at least 2 ids, got {len}")]
    ShortTarget { len: usize },
    #[error("non-finite activation at {0}")]
    NumericFailure(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize, trace: Vec<(usize, f64)> },
    #[error("gradient check epsilon must be positive")]
    BadEpsilon,
    #[error("beam width must be at least 1")]
    BadBeamWidth,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Token ids dense in `[0, size)` with the four specials pinned first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    pub min_frequency: usize,
    pub max_size: usize,
}

impl Vocabulary {
    pub fn from_tokens(
        tokens: Vec<String>,
        min_frequency: usize,
        max_size: usize,
    ) -> Result<Self, NmtError> {
        if tokens.len() < SPECIALS.len()
            || tokens[..SPECIALS.len()] != SPECIALS.map(str::to_string)[..]
        {
            return Err(NmtError::BadCheckpoint("vocabulary missing special tokens".into()));
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary { tokens, ids, min_frequency, max_size })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Count normalized word tokens over both sides of the corpus and keep the
/// most frequent, ties broken lexicographically. `max_size` bounds the whole
/// vocabulary including the 4 specials.
pub fn build_vocab(
    pairs: &[SentencePair],
    min_frequency: usize,
    max_size: usize,
) -> Result<Vocabulary, NmtError> {
    if pairs.is_empty() {
        return Err(NmtError::EmptyCorpus);
    }
    if max_size <= SPECIALS.len() {
        return Err(NmtError::BadVocabSize { max_size });
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for pair in pairs {
        for word in pair.source.normalized_words().into_iter().chain(pair.target.normalized_words())
        {
            *counts.entry(word).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_frequency).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - SPECIALS.len());

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Vocabulary::from_tokens(tokens, min_frequency, max_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    Target,
}

/// Map a sentence to ids; target sequences are wrapped `BOS … EOS`. The flag
/// reports whether the configured length cap dropped tokens.
pub fn encode_ids(
    sentence: &Sentence,
    vocab: &Vocabulary,
    role: Role,
    config: &ModelConfig,
) -> (Vec<usize>, bool) {
    let words = sentence.normalized_words();
    match role {
        Role::Source => {
            let truncated = words.len() > config.max_source_len;
            let ids = words.iter().take(config.max_source_len).map(|w| vocab.id(w)).collect();
            (ids, truncated)
        }
        Role::Target => {
            let body = config.max_target_len.saturating_sub(2);
            let truncated = words.len() > body;
            let mut ids = Vec::with_capacity(words.len().min(body) + 2);
            ids.push(BOS);
            ids.extend(words.iter().take(body).map(|w| vocab.id(w)));
            ids.push(EOS);
            (ids, truncated)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Hidden size per encoder direction; the decoder runs at twice this.
    pub hidden_dim: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 32, hidden_dim: 64, max_source_len: 60, max_target_len: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One LSTM's weights with fused gate blocks. Row layout of the 4h rows:
/// input gate, forget gate, cell candidate, output gate.
#[derive(Debug, Clone, PartialEq)]
struct LstmParams {
    w_x: Mat, // 4h x in_dim
    w_h: Mat, // 4h x h
    b: Vec<f64>,
    hidden: usize,
}

impl LstmParams {
    fn zeros(in_dim: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_x: Mat::zeros(4 * hidden, in_dim),
            w_h: Mat::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
            hidden,
        }
    }
}

/// All trainable tensors. The same struct doubles as a gradient or optimizer
/// moment buffer via [`ModelParams::zeros_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    vocab_size: usize,
    config: ModelConfig,
    src_embed: Mat, // V x E
    tgt_embed: Mat, // V x E
    enc_fwd: LstmParams,
    enc_bwd: LstmParams,
    dec: LstmParams, // hidden = 2 x hidden_dim
    attn: Mat,       // D x D
    out_w: Mat,      // V x 2D
    out_b: Vec<f64>, // V
}

pub const PARAM_GROUPS: [&str; 14] = [
    "src_embed",
    "tgt_embed",
    "enc_fwd.w_x",
    "enc_fwd.w_h",
    "enc_fwd.b",
    "enc_bwd.w_x",
    "enc_bwd.w_h",
    "enc_bwd.b",
    "dec.w_x",
    "dec.w_h",
    "dec.b",
    "attn",
    "out_w",
    "out_b",
];

impl ModelParams {
    fn empty(config: ModelConfig, vocab_size: usize) -> ModelParams {
        let e = config.embed_dim;
        let h = config.hidden_dim;
        let d = 2 * h;
        ModelParams {
            vocab_size,
            config,
            src_embed: Mat::zeros(vocab_size, e),
            tgt_embed: Mat::zeros(vocab_size, e),
            enc_fwd: LstmParams::zeros(e, h),
            enc_bwd: LstmParams::zeros(e, h),
            dec: LstmParams::zeros(e, d),
            attn: Mat::zeros(d, d),
            out_w: Mat::zeros(vocab_size, 2 * d),
            out_b: vec![0.0; vocab_size],
        }
    }

    /// Seeded initialization: every weight uniform in [-0.08, 0.08] except the
    /// output bias, which stays zero so a fresh model predicts near-uniformly.
    pub fn init(config: ModelConfig, vocab_size: usize, seed: u64) -> ModelParams {
        let mut params = ModelParams::empty(config, vocab_size);
        let mut rng = SplitMix64::new(seed);
        for (name, block) in params.blocks_mut() {
            if name == "out_b" {
                continue;
            }
            for value in block {
                *value = rng.uniform_range(-0.08, 0.08);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams::empty(self.config, self.vocab_size)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameter blocks in the fixed serialization order of [`PARAM_GROUPS`].
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("src_embed", &self.src_embed.data[..]),
            ("tgt_embed", &self.tgt_embed.data[..]),
            ("enc_fwd.w_x", &self.enc_fwd.w_x.data[..]),
            ("enc_fwd.w_h", &self.enc_fwd.w_h.data[..]),
            ("enc_fwd.b", &self.enc_fwd.b[..]),
            ("enc_bwd.w_x", &self.enc_bwd.w_x.data[..]),
            ("enc_bwd.w_h", &self.enc_bwd.w_h.data[..]),
            ("enc_bwd.b", &self.enc_bwd.b[..]),
            ("dec.w_x", &self.dec.w_x.data[..]),
            ("dec.w_h", &self.dec.w_h.data[..]),
            ("dec.b", &self.dec.b[..]),
            ("attn", &self.attn.data[..]),
            ("out_w", &self.out_w.data[..]),
            ("out_b", &self.out_b[..]),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("src_embed", &mut self.src_embed.data[..]),
            ("tgt_embed", &mut self.tgt_embed.data[..]),
            ("enc_fwd.w_x", &mut self.enc_fwd.w_x.data[..]),
            ("enc_fwd.w_h", &mut self.enc_fwd.w_h.data[..]),
            ("enc_fwd.b", &mut self.enc_fwd.b[..]),
            ("enc_bwd.w_x", &mut self.enc_bwd.w_x.data[..]),
            ("enc_bwd.w_h", &mut self.enc_bwd.w_h.data[..]),
            ("enc_bwd.b", &mut self.enc_bwd.b[..]),
            ("dec.w_x", &mut self.dec.w_x.data[..]),
            ("dec.w_h", &mut self.dec.w_h.data[..]),
            ("dec.b", &mut self.dec.b[..]),
            ("attn", &mut self.attn.data[..]),
            ("out_w", &mut self.out_w.data[..]),
            ("out_b", &mut self.out_b[..]),
        ]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations from one LSTM step, kept for backprop.
#[derive(Debug, Clone)]
struct StepCache {
    gi: Vec<f64>,
    gf: Vec<f64>,
    gg: Vec<f64>,
    go: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn lstm_step(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let hd = p.hidden;
    let mut pre = p.b.clone();
    for (r, value) in pre.iter_mut().enumerate() {
        *value += dot(p.w_x.row(r), x) + dot(p.w_h.row(r), h_prev);
    }
    let mut cache = StepCache {
        gi: vec![0.0; hd],
        gf: vec![0.0; hd],
        gg: vec![0.0; hd],
        go: vec![0.0; hd],
        c: vec![0.0; hd],
        h: vec![0.0; hd],
        tanh_c: vec![0.0; hd],
    };
    for k in 0..hd {
        let i = sigmoid(pre[k]);
        let f = sigmoid(pre[hd + k]);
        let g = pre[2 * hd + k].tanh();
        let o = sigmoid(pre[3 * hd + k]);
        let c = f * c_prev[k] + i * g;
        let tc = c.tanh();
        cache.gi[k] = i;
        cache.gf[k] = f;
        cache.gg[k] = g;
        cache.go[k] = o;
        cache.c[k] = c;
        cache.tanh_c[k] = tc;
        cache.h[k] = o * tc;
    }
    cache
}

/// Backprop through one LSTM step. `dh`/`dc` are the incoming gradients for
/// this step's outputs; returns gradients for the input and previous state
/// and accumulates weight gradients into `grads`.
#[allow(clippy::too_many_arguments)]
fn lstm_step_backward(
    p: &LstmParams,
    grads: &mut LstmParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    cache: &StepCache,
    dh: &[f64],
    dc_in: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = p.hidden;
    let mut dpre = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, g, o) = (cache.gi[k], cache.gf[k], cache.gg[k], cache.go[k]);
        let tc = cache.tanh_c[k];
        let do_ = dh[k] * tc;
        let dc = dc_in[k] + dh[k] * o * (1.0 - tc * tc);
        let di = dc * g;
        let df = dc * c_prev[k];
        let dg = dc * i;
        dc_prev[k] = dc * f;
        dpre[k] = di * i * (1.0 - i);
        dpre[hd + k] = df * f * (1.0 - f);
        dpre[2 * hd + k] = dg * (1.0 - g * g);
        dpre[3 * hd + k] = do_ * o * (1.0 - o);
    }
    let mut dx = vec![0.0; p.w_x.cols];
    let mut dh_prev = vec![0.0; hd];
    for r in 0..4 * hd {
        let d = dpre[r];
        if d == 0.0 {
            continue;
        }
        grads.b[r] += d;
        let wx_row = grads.w_x.row_mut(r);
        for (slot, &xv) in wx_row.iter_mut().zip(x) {
            *slot += d * xv;
        }
        let wh_row = grads.w_h.row_mut(r);
        for (slot, &hv) in wh_row.iter_mut().zip(h_prev) {
            *slot += d * hv;
        }
        for (slot, &w) in dx.iter_mut().zip(p.w_x.row(r)) {
            *slot += d * w;
        }
        for (slot, &w) in dh_prev.iter_mut().zip(p.w_h.row(r)) {
            *slot += d * w;
        }
    }
    (dx, dh_prev, dc_prev)
}

fn check_finite(values: &[f64], what: impl Fn() -> String) -> Result<(), NmtError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(NmtError::NumericFailure(what()));
    }
    Ok(())
}

/// Everything the backward pass needs from one pair's forward run.
struct PairCache {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>, // indexed by source position
    enc_out: Vec<Vec<f64>>,
    dec: Vec<StepCache>,
    alphas: Vec<Vec<f64>>,
    contexts: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    nll_sum: f64,
}

fn run_forward(
    params: &ModelParams,
    src: &[usize],
    tgt: &[usize],
) -> Result<PairCache, NmtError> {
    if src.is_empty() {
        return Err(NmtError::ZeroLengthSource);
    }
    if tgt.len() < 2 {
        return Err(NmtError::ShortTarget { len: tgt.len() });
    }
    let h = params.config.hidden_dim;
    let d = 2 * h;
    let s = src.len();

    let mut fwd: Vec<StepCache> = Vec::with_capacity(s);
    let zeros_h = vec![0.0; h];
    for (t, &id) in src.iter().enumerate() {
        let (h_prev, c_prev) = match fwd.last() {
            Some(prev) => (&prev.h, &prev.c),
            None => (&zeros_h, &zeros_h),
        };
        let step = lstm_step(&params.enc_fwd, params.src_embed.row(id), h_prev, c_prev);
        check_finite(&step.h, || format!("forward encoder step {t}"))?;
        fwd.push(step);
    }

    let mut bwd: Vec<Option<StepCache>> = vec![None; s];
    {
        let mut h_prev = zeros_h.clone();
        let mut c_prev = zeros_h.clone();
        for t in (0..s).rev() {
            let step = lstm_step(&params.enc_bwd, params.src_embed.row(src[t]), &h_prev, &c_prev);
            check_finite(&step.h, || format!("backward encoder step {t}"))?;
            h_prev = step.h.clone();
            c_prev = step.c.clone();
            bwd[t] = Some(step);
        }
    }
    let bwd: Vec<StepCache> = bwd.into_iter().map(|s| s.expect("all positions filled")).collect();

    let enc_out: Vec<Vec<f64>> = (0..s)
        .map(|t| {
            let mut row = Vec::with_capacity(d);
            row.extend_from_slice(&fwd[t].h);
            row.extend_from_slice(&bwd[t].h);
            row
        })
        .collect();

    let mut h_dec: Vec<f64> = fwd[s - 1].h.iter().chain(&bwd[0].h).copied().collect();
    let mut c_dec: Vec<f64> = fwd[s - 1].c.iter().chain(&bwd[0].c).copied().collect();

    let steps = tgt.len() - 1;
    let mut dec = Vec::with_capacity(steps);
    let mut alphas = Vec::with_capacity(steps);
    let mut contexts = Vec::with_capacity(steps);
    let mut probs = Vec::with_capacity(steps);
    let mut nll_sum = 0.0;

    for j in 0..steps {
        let step = lstm_step(&params.dec, params.tgt_embed.row(tgt[j]), &h_dec, &c_dec);
        check_finite(&step.h, || format!("decoder step {j}"))?;

        // Bilinear attention: score_t = h . (W_a enc_t).
        let mut scores = vec![0.0; s];
        for (t, enc) in enc_out.iter().enumerate() {
            let mut score = 0.0;
            for r in 0..d {
                score += step.h[r] * dot(params.attn.row(r), enc);
            }
            scores[t] = score;
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
        let norm: f64 = alpha.iter().sum();
        for a in &mut alpha {
            *a /= norm;
        }

        let mut context = vec![0.0; d];
        for (t, enc) in enc_out.iter().enumerate() {
            let a = alpha[t];
            for (slot, &e) in context.iter_mut().zip(enc) {
                *slot += a * e;
            }
        }

        let mut logits = params.out_b.clone();
        for (v, value) in logits.iter_mut().enumerate() {
            let row = params.out_w.row(v);
            *value += dot(&row[..d], &step.h) + dot(&row[d..], &context);
        }
        let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = logits.iter().map(|l| (l - max_logit).exp()).sum::<f64>().ln() + max_logit;
        let log_probs: Vec<f64> = logits.iter().map(|l| l - log_norm).collect();
        check_finite(&log_probs, || format!("decoder softmax step {j}"))?;
        nll_sum -= log_probs[tgt[j + 1]];

        h_dec = step.h.clone();
        c_dec = step.c.clone();
        dec.push(step);
        alphas.push(alpha);
        contexts.push(context);
        probs.push(log_probs.iter().map(|lp| lp.exp()).collect());
    }

    Ok(PairCache { fwd, bwd, enc_out, dec, alphas, contexts, probs, nll_sum })
}

/// Forward-pass summary for one pair under teacher forcing.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Mean negative log-likelihood per predicted token.
    pub loss: f64,
    pub token_count: usize,
    /// One probability distribution over the vocabulary per predicted token.
    pub distributions: Vec<Vec<f64>>,
    /// One attention row over source positions per predicted token.
    pub attention: Vec<Vec<f64>>,
}

pub fn forward(
    params: &ModelParams,
    src: &[usize],
    tgt: &[usize],
) -> Result<Forward, NmtError> {
    let cache = run_forward(params, src, tgt)?;
    let tokens = tgt.len() - 1;
    Ok(Forward {
        loss: cache.nll_sum / tokens as f64,
        token_count: tokens,
        distributions: cache.probs,
        attention: cache.alphas,
    })
}

/// One encoded training example; the target includes BOS and EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIds {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Encode sentence pairs for training. Errors on a pair whose source has no
/// word tokens; returns how many sequences the length caps truncated.
pub fn encode_pairs(
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<(Vec<PairIds>, usize), NmtError> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut truncated = 0;
    for pair in pairs {
        let (src, src_trunc) = encode_ids(&pair.source, vocab, Role::Source, config);
        let (tgt, tgt_trunc) = encode_ids(&pair.target, vocab, Role::Target, config);
        if src.is_empty() {
            return Err(NmtError::ZeroLengthSource);
        }
        truncated += usize::from(src_trunc) + usize::from(tgt_trunc);
        out.push(PairIds { src, tgt });
    }
    Ok((out, truncated))
}

fn backward_pair(
    params: &ModelParams,
    grads: &mut ModelParams,
    src: &[usize],
    tgt: &[usize],
    cache: &PairCache,
) {
    let h = params.config.hidden_dim;
    let d = 2 * h;
    let s = src.len();
    let steps = tgt.len() - 1;
    let zeros_h = vec![0.0; h];
    let zeros_d = vec![0.0; d];

    let mut denc_out = vec![vec![0.0; d]; s];
    let mut rdh = vec![0.0; d];
    let mut rdc = vec![0.0; d];

    for j in (0..steps).rev() {
        let step = &cache.dec[j];
        let alpha = &cache.alphas[j];
        let context = &cache.contexts[j];

        // d(sum NLL)/dlogits = softmax - one_hot(target).
        let mut dlogits = cache.probs[j].clone();
        dlogits[tgt[j + 1]] -= 1.0;

        let mut dh = rdh.clone();
        let mut dctx = vec![0.0; d];
        for (v, &dl) in dlogits.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            grads.out_b[v] += dl;
            let grow = grads.out_w.row_mut(v);
            for k in 0..d {
                grow[k] += dl * step.h[k];
                grow[d + k] += dl * context[k];
            }
            let prow = params.out_w.row(v);
            for k in 0..d {
                dh[k] += dl * prow[k];
                dctx[k] += dl * prow[d + k];
            }
        }

        // context = sum_t alpha_t enc_t
        let mut dalpha = vec![0.0; s];
        for (t, enc) in cache.enc_out.iter().enumerate() {
            dalpha[t] = dot(&dctx, enc);
            let a = alpha[t];
            if a != 0.0 {
                for (slot, &dc) in denc_out[t].iter_mut().zip(&dctx) {
                    *slot += a * dc;
                }
            }
        }
        // softmax backward
        let pulled: f64 = alpha.iter().zip(&dalpha).map(|(a, da)| a * da).sum();
        let dscores: Vec<f64> = alpha.iter().zip(&dalpha).map(|(a, da)| a * (da - pulled)).collect();

        // score_t = h . (W_a enc_t)
        let mut wat_h = vec![0.0; d]; // W_a^T h
        for r in 0..d {
            let hr = step.h[r];
            if hr != 0.0 {
                for (slot, &w) in wat_h.iter_mut().zip(params.attn.row(r)) {
                    *slot += hr * w;
                }
            }
        }
        for (t, enc) in cache.enc_out.iter().enumerate() {
            let ds = dscores[t];
            if ds == 0.0 {
                continue;
            }
            for r in 0..d {
                dh[r] += ds * dot(params.attn.row(r), enc);
                let arow = grads.attn.row_mut(r);
                let hr = step.h[r];
                for (slot, &e) in arow.iter_mut().zip(enc) {
                    *slot += ds * hr * e;
                }
            }
            for (slot, &w) in denc_out[t].iter_mut().zip(&wat_h) {
                *slot += ds * w;
            }
        }

        let (h_prev, c_prev): (Vec<f64>, Vec<f64>) = if j == 0 {
            (
                cache.fwd[s - 1].h.iter().chain(&cache.bwd[0].h).copied().collect(),
                cache.fwd[s - 1].c.iter().chain(&cache.bwd[0].c).copied().collect(),
            )
        } else {
            (cache.dec[j - 1].h.clone(), cache.dec[j - 1].c.clone())
        };
        let (dx, dh_prev, dc_prev) = lstm_step_backward(
            &params.dec,
            &mut grads.dec,
            params.tgt_embed.row(tgt[j]),
            &h_prev,
            &c_prev,
            step,
            &dh,
            &rdc,
        );
        for (slot, &v) in grads.tgt_embed.row_mut(tgt[j]).iter_mut().zip(&dx) {
            *slot += v;
        }
        rdh = dh_prev;
        rdc = dc_prev;
    }

    // Decoder initial state was the concatenated final directional states.
    let mut dh_fwd = vec![zeros_h.clone(); s];
    let mut dc_fwd = vec![zeros_h.clone(); s];
    let mut dh_bwd = vec![zeros_h.clone(); s];
    let mut dc_bwd = vec![zeros_h.clone(); s];
    dh_fwd[s - 1].copy_from_slice(&rdh[..h]);
    dh_bwd[0].copy_from_slice(&rdh[h..]);
    dc_fwd[s - 1].copy_from_slice(&rdc[..h]);
    dc_bwd[0].copy_from_slice(&rdc[h..]);
    for (t, de) in denc_out.iter().enumerate() {
        for k in 0..h {
            dh_fwd[t][k] += de[k];
            dh_bwd[t][k] += de[h + k];
        }
    }
    let _ = zeros_d;

    // Forward-direction BPTT, last position first.
    let mut rdh = vec![0.0; h];
    let mut rdc = vec![0.0; h];
    for t in (0..s).rev() {
        let dh: Vec<f64> = dh_fwd[t].iter().zip(&rdh).map(|(a, b)| a + b).collect();
        let dc: Vec<f64> = dc_fwd[t].iter().zip(&rdc).map(|(a, b)| a + b).collect();
        let (h_prev, c_prev) = if t == 0 {
            (&zeros_h, &zeros_h)
        } else {
            (&cache.fwd[t - 1].h, &cache.fwd[t - 1].c)
        };
        let (dx, dh_prev, dc_prev) = lstm_step_backward(
            &params.enc_fwd,
            &mut grads.enc_fwd,
            params.src_embed.row(src[t]),
            h_prev,
            c_prev,
            &cache.fwd[t],
            &dh,
            &dc,
        );
        for (slot, &v) in grads.src_embed.row_mut(src[t]).iter_mut().zip(&dx) {
            *slot += v;
        }
        rdh = dh_prev;
        rdc = dc_prev;
    }

    // Backward direction processed positions right to left, so its BPTT walks
    // left to right; dh_prev at position t flows to position t + 1.
    let mut rdh = vec![0.0; h];
    let mut rdc = vec![0.0; h];
    for t in 0..s {
        let dh: Vec<f64> = dh_bwd[t].iter().zip(&rdh).map(|(a, b)| a + b).collect();
        let dc: Vec<f64> = dc_bwd[t].iter().zip(&rdc).map(|(a, b)| a + b).collect();
        let (h_prev, c_prev) = if t + 1 < s {
            (&cache.bwd[t + 1].h, &cache.bwd[t + 1].c)
        } else {
            (&zeros_h, &zeros_h)
        };
        let (dx, dh_prev, dc_prev) = lstm_step_backward(
            &params.enc_bwd,
            &mut grads.enc_bwd,
            params.src_embed.row(src[t]),
            h_prev,
            c_prev,
            &cache.bwd[t],
            &dh,
            &dc,
        );
        for (slot, &v) in grads.src_embed.row_mut(src[t]).iter_mut().zip(&dx) {
            *slot += v;
        }
        rdh = dh_prev;
        rdc = dc_prev;
    }
}

/// Exact analytic gradients of the batch-mean loss (sum of per-token NLL over
/// the batch divided by the total predicted-token count), plus that loss.
pub fn backward(params: &ModelParams, batch: &[PairIds]) -> Result<(ModelParams, f64), NmtError> {
    let mut grads = params.zeros_like();
    let mut nll_sum = 0.0;
    let mut tokens = 0usize;
    for pair in batch {
        let cache = run_forward(params, &pair.src, &pair.tgt)?;
        backward_pair(params, &mut grads, &pair.src, &pair.tgt, &cache);
        nll_sum += cache.nll_sum;
        tokens += pair.tgt.len() - 1;
    }
    let scale = 1.0 / tokens as f64;
    for (_, block) in grads.blocks_mut() {
        for v in block {
            *v *= scale;
        }
    }
    Ok((grads, nll_sum * scale))
}

/// Batch-mean loss without gradients.
pub fn batch_loss(params: &ModelParams, batch: &[PairIds]) -> Result<f64, NmtError> {
    let mut nll_sum = 0.0;
    let mut tokens = 0usize;
    for pair in batch {
        let cache = run_forward(params, &pair.src, &pair.tgt)?;
        nll_sum += cache.nll_sum;
        tokens += pair.tgt.len() - 1;
    }
    Ok(nll_sum / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Record the loss every this many steps (the final step always logs).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            steps: 1000,
            batch_size: 16,
            seed: 0,
            clip_norm: 5.0,
            log_every: 10,
        }
    }
}

/// A trained model with everything needed to translate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub step: usize,
    pub final_loss: f64,
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: usize,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ModelParams) -> Adam {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut().into_iter().zip(self.v.blocks_mut()))
        {
            for k in 0..p.len() {
                m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) {
    let norm: f64 = grads
        .blocks()
        .iter()
        .map(|(_, b)| b.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, block) in grads.blocks_mut() {
            for g in block {
                *g *= scale;
            }
        }
    }
}

/// Train from scratch with Adam and global-norm clipping. Batch order is a
/// pure function of the seed: each epoch shuffles pair indices with a
/// seed-and-epoch-derived generator and walks them in fixed-size chunks.
pub fn train(
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    config: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(Checkpoint, Vec<(usize, f64)>), NmtError> {
    if pairs.is_empty() {
        return Err(NmtError::EmptyCorpus);
    }
    let (examples, _truncated) = encode_pairs(pairs, vocab, config)?;
    let mut params = ModelParams::init(*config, vocab.size(), mix_seed(tc.seed, 0));
    let mut adam = Adam::new(&params);
    let mut trace: Vec<(usize, f64)> = Vec::new();

    let n = examples.len();
    let batch = tc.batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = 0u64;
    let mut cursor = n; // forces a shuffle before the first batch

    let mut final_loss = f64::NAN;
    for step in 1..=tc.steps {
        if cursor >= n {
            epoch += 1;
            SplitMix64::new(mix_seed(tc.seed, epoch)).shuffle(&mut order);
            cursor = 0;
        }
        let take = batch.min(n - cursor);
        let chunk: Vec<PairIds> =
            order[cursor..cursor + take].iter().map(|&i| examples[i].clone()).collect();
        cursor += take;

        let result = backward(&params, &chunk);
        let (mut grads, loss) = match result {
            Ok(ok) => ok,
            Err(NmtError::NumericFailure(_)) => {
                return Err(NmtError::Diverged { step, trace });
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(NmtError::Diverged { step, trace });
        }
        clip_global_norm(&mut grads, tc.clip_norm);
        adam.update(&mut params, &grads, tc.learning_rate);
        final_loss = loss;
        if step % tc.log_every.max(1) == 0 || step == tc.steps {
            trace.push((step, loss));
        }
    }

    let checkpoint = Checkpoint {
        config: *config,
        vocab: vocab.clone(),
        params,
        step: tc.steps,
        final_loss,
    };
    Ok((checkpoint, trace))
}

pub fn trace_to_csv(trace: &[(usize, f64)]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in trace {
        out.push_str(&format!("{step},{loss}\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub sentence: Sentence,
    pub tokens: Vec<String>,
    /// Log-probability of each emitted token.
    pub token_scores: Vec<f64>,
    /// True when EOS was the very first prediction.
    pub empty: bool,
}

/// Decoder state that can be stepped token by token.
struct DecoderState<'a> {
    params: &'a ModelParams,
    enc_out: Vec<Vec<f64>>,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> DecoderState<'a> {
    fn start(params: &'a ModelParams, src: &[usize]) -> Result<DecoderState<'a>, NmtError> {
        if src.is_empty() {
            return Err(NmtError::ZeroLengthSource);
        }
        // Encode via the shared forward path with a minimal dummy target.
        let cache = run_forward(params, src, &[BOS, EOS])?;
        let s = src.len();
        let h = params.config.hidden_dim;
        let _ = h;
        Ok(DecoderState {
            params,
            enc_out: cache.enc_out,
            h: cache.fwd[s - 1].h.iter().chain(&cache.bwd[0].h).copied().collect(),
            c: cache.fwd[s - 1].c.iter().chain(&cache.bwd[0].c).copied().collect(),
        })
    }

    /// Feed one input token; returns log-probabilities for the next token.
    fn step(&mut self, input: usize) -> Result<Vec<f64>, NmtError> {
        let params = self.params;
        let d = self.h.len();
        let step = lstm_step(&params.dec, params.tgt_embed.row(input), &self.h, &self.c);
        check_finite(&step.h, || "decode step".to_string())?;
        let mut scores = vec![0.0; self.enc_out.len()];
        for (t, enc) in self.enc_out.iter().enumerate() {
            let mut score = 0.0;
            for r in 0..d {
                score += step.h[r] * dot(params.attn.row(r), enc);
            }
            scores[t] = score;
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
        let norm: f64 = alpha.iter().sum();
        for a in &mut alpha {
            *a /= norm;
        }
        let mut context = vec![0.0; d];
        for (t, enc) in self.enc_out.iter().enumerate() {
            let a = alpha[t];
            for (slot, &e) in context.iter_mut().zip(enc) {
                *slot += a * e;
            }
        }
        let mut logits = params.out_b.clone();
        for (v, value) in logits.iter_mut().enumerate() {
            let row = params.out_w.row(v);
            *value += dot(&row[..d], &step.h) + dot(&row[d..], &context);
        }
        let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = logits.iter().map(|l| (l - max_logit).exp()).sum::<f64>().ln() + max_logit;
        self.h = step.h;
        self.c = step.c;
        Ok(logits.into_iter().map(|l| l - log_norm).collect())
    }

    fn snapshot(&self) -> (Vec<f64>, Vec<f64>) {
        (self.h.clone(), self.c.clone())
    }

    fn restore(&mut self, state: &(Vec<f64>, Vec<f64>)) {
        self.h = state.0.clone();
        self.c = state.1.clone();
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    let _ = values[best];
    best
}

/// Translate one sentence. Decoding stops at EOS or after `max_len` tokens;
/// beam search ranks hypotheses by total log-probability divided by token
/// count, with ties broken toward lower token ids.
pub fn translate(
    checkpoint: &Checkpoint,
    sentence: &Sentence,
    mode: DecodeMode,
    max_len: usize,
) -> Result<Translation, NmtError> {
    let (src, _) = encode_ids(sentence, &checkpoint.vocab, Role::Source, &checkpoint.config);
    let ids_scores = match mode {
        DecodeMode::Greedy => decode_greedy(checkpoint, &src, max_len)?,
        DecodeMode::Beam(width) => {
            if width == 0 {
                return Err(NmtError::BadBeamWidth);
            }
            decode_beam(checkpoint, &src, width, max_len)?
        }
    };
    let (ids, token_scores) = ids_scores;
    let tokens: Vec<String> = ids.iter().map(|&id| checkpoint.vocab.token(id).to_string()).collect();
    let raw = tokens.join(" ");
    Ok(Translation { sentence: Sentence::new(raw), empty: tokens.is_empty(), tokens, token_scores })
}

fn decode_greedy(
    checkpoint: &Checkpoint,
    src: &[usize],
    max_len: usize,
) -> Result<(Vec<usize>, Vec<f64>), NmtError> {
    let mut state = DecoderState::start(&checkpoint.params, src)?;
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut input = BOS;
    for _ in 0..max_len {
        let log_probs = state.step(input)?;
        let next = argmax(&log_probs);
        if next == EOS {
            break;
        }
        ids.push(next);
        scores.push(log_probs[next]);
        input = next;
    }
    Ok((ids, scores))
}

struct Hypothesis {
    ids: Vec<usize>,
    scores: Vec<f64>,
    state: (Vec<f64>, Vec<f64>),
    log_prob_sum: f64, // includes the EOS step when finished
    steps: usize,
    finished: bool,
}

impl Hypothesis {
    fn rank_score(&self) -> f64 {
        self.log_prob_sum / self.steps.max(1) as f64
    }
}

fn decode_beam(
    checkpoint: &Checkpoint,
    src: &[usize],
    width: usize,
    max_len: usize,
) -> Result<(Vec<usize>, Vec<f64>), NmtError> {
    let mut state = DecoderState::start(&checkpoint.params, src)?;
    let initial = state.snapshot();
    let mut beam = vec![Hypothesis {
        ids: Vec::new(),
        scores: Vec::new(),
        state: initial,
        log_prob_sum: 0.0,
        steps: 0,
        finished: false,
    }];

    for _ in 0..max_len {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        // (candidate rank score, token id, parent index, finished, log_prob)
        let mut candidates: Vec<(f64, usize, usize, bool, f64)> = Vec::new();
        let mut next_states: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (parent, hyp) in beam.iter().enumerate() {
            if hyp.finished {
                candidates.push((hyp.rank_score(), usize::MAX, parent, true, 0.0));
                next_states.push(hyp.state.clone());
                continue;
            }
            state.restore(&hyp.state);
            let log_probs = state.step(*hyp.ids.last().unwrap_or(&BOS))?;
            let stepped = state.snapshot();
            for (token, &lp) in log_probs.iter().enumerate() {
                let sum = hyp.log_prob_sum + lp;
                let score = sum / (hyp.steps + 1) as f64;
                candidates.push((score, token, parent, token == EOS, lp));
            }
            next_states.push(stepped);
        }
        // Deterministic order: best normalized score, then lowest token id,
        // then lowest parent index.
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next_beam = Vec::with_capacity(width);
        for &(_, token, parent, finished, lp) in candidates.iter() {
            if next_beam.len() >= width {
                break;
            }
            let hyp = &beam[parent];
            if token == usize::MAX {
                next_beam.push(Hypothesis {
                    ids: hyp.ids.clone(),
                    scores: hyp.scores.clone(),
                    state: hyp.state.clone(),
                    log_prob_sum: hyp.log_prob_sum,
                    steps: hyp.steps,
                    finished: true,
                });
                continue;
            }
            let mut ids = hyp.ids.clone();
            let mut scores = hyp.scores.clone();
            if !finished {
                ids.push(token);
                scores.push(lp);
            }
            next_beam.push(Hypothesis {
                ids,
                scores,
                state: next_states[parent].clone(),
                log_prob_sum: hyp.log_prob_sum + lp,
                steps: hyp.steps + 1,
                finished,
            });
        }
        beam = next_beam;
    }

    let best = beam
        .into_iter()
        .max_by(|a, b| {
            a.rank_score()
                .partial_cmp(&b.rank_score())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.ids.cmp(&a.ids))
        })
        .expect("beam never empty");
    Ok((best.ids, best.scores))
}

mod hp {
    //! Double-double mirror of the forward loss. The finite-difference probe
    //! divides a near-cancelling loss difference by 2ε, so plain f64 noise
    //! (about one ulp of the loss) would swamp gradients smaller than ~1e-8.

    use twofloat::TwoFloat;

    use super::{LstmParams, ModelParams, PairIds};

    fn hp(x: f64) -> TwoFloat {
        TwoFloat::from(x)
    }

    fn sigmoid(x: TwoFloat) -> TwoFloat {
        hp(1.0) / (hp(1.0) + (-x).exp())
    }

    fn lstm_step(
        p: &LstmParams,
        x: &[TwoFloat],
        h_prev: &[TwoFloat],
        c_prev: &[TwoFloat],
    ) -> (Vec<TwoFloat>, Vec<TwoFloat>) {
        let hd = p.hidden;
        let pre = |r: usize| -> TwoFloat {
            let mut acc = hp(p.b[r]);
            for (&w, &xv) in p.w_x.row(r).iter().zip(x) {
                acc += hp(w) * xv;
            }
            for (&w, &hv) in p.w_h.row(r).iter().zip(h_prev) {
                acc += hp(w) * hv;
            }
            acc
        };
        let mut h_out = Vec::with_capacity(hd);
        let mut c_out = Vec::with_capacity(hd);
        for k in 0..hd {
            let i = sigmoid(pre(k));
            let f = sigmoid(pre(hd + k));
            let g = pre(2 * hd + k).tanh();
            let o = sigmoid(pre(3 * hd + k));
            let c = f * c_prev[k] + i * g;
            c_out.push(c);
            h_out.push(o * c.tanh());
        }
        (h_out, c_out)
    }

    fn embed(table: &super::Mat, id: usize) -> Vec<TwoFloat> {
        table.row(id).iter().map(|&v| hp(v)).collect()
    }

    fn max(values: &[TwoFloat]) -> TwoFloat {
        let mut best = values[0];
        for &v in &values[1..] {
            if v > best {
                best = v;
            }
        }
        best
    }

    fn pair_nll(params: &ModelParams, src: &[usize], tgt: &[usize]) -> TwoFloat {
        let h = params.config.hidden_dim;
        let d = 2 * h;
        let s = src.len();
        let zeros = vec![hp(0.0); h];

        let mut fwd_h = Vec::with_capacity(s);
        let mut fwd_c = Vec::with_capacity(s);
        for (t, &id) in src.iter().enumerate() {
            let (hp_, cp) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&fwd_h[t - 1], &fwd_c[t - 1])
            };
            let x = embed(&params.src_embed, id);
            let (h_new, c_new) = lstm_step(&params.enc_fwd, &x, hp_, cp);
            fwd_h.push(h_new);
            fwd_c.push(c_new);
        }
        let mut bwd_h = vec![Vec::new(); s];
        let mut bwd_c = vec![Vec::new(); s];
        {
            let mut h_prev = zeros.clone();
            let mut c_prev = zeros.clone();
            for t in (0..s).rev() {
                let x = embed(&params.src_embed, src[t]);
                let (h_new, c_new) = lstm_step(&params.enc_bwd, &x, &h_prev, &c_prev);
                h_prev = h_new.clone();
                c_prev = c_new.clone();
                bwd_h[t] = h_new;
                bwd_c[t] = c_new;
            }
        }
        let enc_out: Vec<Vec<TwoFloat>> = (0..s)
            .map(|t| fwd_h[t].iter().chain(&bwd_h[t]).copied().collect())
            .collect();
        let mut h_dec: Vec<TwoFloat> =
            fwd_h[s - 1].iter().chain(&bwd_h[0]).copied().collect();
        let mut c_dec: Vec<TwoFloat> =
            fwd_c[s - 1].iter().chain(&bwd_c[0]).copied().collect();

        let mut nll = hp(0.0);
        for j in 0..tgt.len() - 1 {
            let x = embed(&params.tgt_embed, tgt[j]);
            let (h_new, c_new) = lstm_step(&params.dec, &x, &h_dec, &c_dec);

            let scores: Vec<TwoFloat> = enc_out
                .iter()
                .map(|enc| {
                    let mut score = hp(0.0);
                    for r in 0..d {
                        let mut row = hp(0.0);
                        for (&w, &e) in params.attn.row(r).iter().zip(enc) {
                            row += hp(w) * e;
                        }
                        score += h_new[r] * row;
                    }
                    score
                })
                .collect();
            let m = max(&scores);
            let weights: Vec<TwoFloat> = scores.iter().map(|&v| (v - m).exp()).collect();
            let mut norm = hp(0.0);
            for &w in &weights {
                norm += w;
            }
            let mut context = vec![hp(0.0); d];
            for (w, enc) in weights.iter().zip(&enc_out) {
                let a = *w / norm;
                for (slot, &e) in context.iter_mut().zip(enc) {
                    *slot += a * e;
                }
            }

            let logits: Vec<TwoFloat> = (0..params.vocab_size)
                .map(|v| {
                    let row = params.out_w.row(v);
                    let mut acc = hp(params.out_b[v]);
                    for k in 0..d {
                        acc += hp(row[k]) * h_new[k] + hp(row[d + k]) * context[k];
                    }
                    acc
                })
                .collect();
            let m = max(&logits);
            let mut sum = hp(0.0);
            for &l in &logits {
                sum += (l - m).exp();
            }
            let log_norm = sum.ln() + m;
            nll -= logits[tgt[j + 1]] - log_norm;

            h_dec = h_new;
            c_dec = c_new;
        }
        nll
    }

    pub(super) fn batch_loss(params: &ModelParams, batch: &[PairIds]) -> TwoFloat {
        let mut nll = hp(0.0);
        let mut tokens = 0usize;
        for pair in batch {
            nll += pair_nll(params, &pair.src, &pair.tgt);
            tokens += pair.tgt.len() - 1;
        }
        nll / hp(tokens as f64)
    }
}

/// Per-group worst relative error between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<(&'static str, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|&(_, e)| e).fold(0.0, f64::max)
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("{:<14} {:>14}\n", "group", "max rel error");
        for (name, err) in &self.groups {
            out.push_str(&format!("{name:<14} {err:>14.3e}\n"));
        }
        out
    }
}

/// Compare analytic gradients against central finite differences
/// (L(θ+ε) − L(θ−ε)) / 2ε for every parameter, reporting the worst relative
/// error |a−n| / max(|a|, |n|, 1e-8) per group. The probe losses are
/// evaluated in double-double precision so the difference survives the
/// cancellation; intended for tiny dims.
pub fn gradient_check(
    params: &ModelParams,
    batch: &[PairIds],
    epsilon: f64,
) -> Result<GradCheckReport, NmtError> {
    if epsilon <= 0.0 {
        return Err(NmtError::BadEpsilon);
    }
    let (grads, _) = backward(params, batch)?;
    let mut work = params.clone();
    let mut groups = Vec::with_capacity(PARAM_GROUPS.len());
    for (gi, name) in PARAM_GROUPS.iter().enumerate() {
        let len = grads.blocks()[gi].1.len();
        let mut worst = 0.0f64;
        for k in 0..len {
            let original = work.blocks()[gi].1[k];
            work.blocks_mut()[gi].1[k] = original + epsilon;
            let plus = hp::batch_loss(&work, batch);
            work.blocks_mut()[gi].1[k] = original - epsilon;
            let minus = hp::batch_loss(&work, batch);
            work.blocks_mut()[gi].1[k] = original;
            let numeric = f64::from((plus - minus) / twofloat::TwoFloat::from(2.0 * epsilon));
            let analytic = grads.blocks()[gi].1[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        groups.push((*name, worst));
    }
    Ok(GradCheckReport { groups })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    vocab_tokens: Vec<String>,
    vocab_min_frequency: usize,
    vocab_max_size: usize,
    step: usize,
    final_loss: f64,
    blocks: Vec<(String, usize)>,
}

const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    /// One JSON header line, then every parameter block as raw little-endian
    /// f64 in [`PARAM_GROUPS`] order. Round-trips bit for bit.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NmtError> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.config,
            vocab_tokens: self.vocab.tokens().to_vec(),
            vocab_min_frequency: self.vocab.min_frequency,
            vocab_max_size: self.vocab.max_size,
            step: self.step,
            final_loss: self.final_loss,
            blocks: self.params.blocks().iter().map(|(n, b)| (n.to_string(), b.len())).collect(),
        };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut file, &header)
            .map_err(|e| NmtError::BadCheckpoint(e.to_string()))?;
        file.write_all(b"\n")?;
        for (_, block) in self.params.blocks() {
            for value in block {
                file.write_all(&value.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, NmtError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = file.read(&mut byte)?;
            if n == 0 {
                return Err(NmtError::BadCheckpoint("missing header line".into()));
            }
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| NmtError::BadCheckpoint(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(NmtError::BadCheckpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let vocab = Vocabulary::from_tokens(
            header.vocab_tokens,
            header.vocab_min_frequency,
            header.vocab_max_size,
        )?;
        let mut params = ModelParams::empty(header.config, vocab.size());
        {
            let blocks = params.blocks_mut();
            if header.blocks.len() != blocks.len() {
                return Err(NmtError::BadCheckpoint("wrong block count".into()));
            }
            for ((name, block), (want_name, want_len)) in blocks.into_iter().zip(&header.blocks) {
                if name != want_name || block.len() != *want_len {
                    return Err(NmtError::BadCheckpoint(format!(
                        "block {want_name} ({want_len}) does not match shape {name} ({})",
                        block.len()
                    )));
                }
                let mut buf = [0u8; 8];
                for value in block {
                    file.read_exact(&mut buf).map_err(|_| {
                        NmtError::BadCheckpoint(format!("truncated block {name}"))
                    })?;
                    *value = f64::from_le_bytes(buf);
                }
            }
        }
        Ok(Checkpoint {
            config: header.config,
            vocab,
            params,
            step: header.step,
            final_loss: header.final_loss,
        })
    }
}
