//! Health-literacy translation pipeline.
//!
//! The crate turns consumer-health prose into plainer language in three
//! stages: a phrase thesaurus locates hard-to-read wording ([`lexicon`]), a
//! silver-standard parallel corpus is generated by substituting one phrase
//! per sentence ([`corpus`]), and a small bidirectional-LSTM translator is
//! trained on those pairs ([`nmt`]). The [`eval`] module scores output with
//! BLEU, readability rates, and paired significance tests.
//!
//! Everything is deterministic: randomness flows from explicit seeds through
//! [`rng`], and the data-parallel helpers in [`exec`] produce output
//! byte-identical to their sequential fallbacks.

pub mod corpus;
pub mod eval;
pub mod exec;
pub mod lexicon;
pub mod nmt;
pub mod rng;
pub mod sample;
pub mod text;
