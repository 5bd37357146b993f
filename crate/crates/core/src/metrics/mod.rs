//! Evaluation metrics: BLEU, RIBES, and embedding-based similarity.
//!
//! All scorers take pre-tokenized input; callers decide tokenization
//! (whitespace over [`crate::corpus::preprocess_text`] by default).

mod bleu;
mod ribes;
mod similarity;

use thiserror::Error;

pub use bleu::{
    bleu_corpus, bleu_sentence_avg, ngram_stats, sentence_bleu, BleuScore, NgramStats, Smoothing, DEFAULT_MAX_N,
};
pub use ribes::{align, kendall_tau, nkt, ribes, ribes_with, RibesScore, RIBES_ALPHA, RIBES_BETA};
pub use similarity::{
    cosine, similarity_scores, Embedder, HashEmbedder, HttpEmbedder, SimilarityScores, TableEmbedder,
    DEFAULT_EMBEDDING_MODEL, NORM_EPSILON,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("hypothesis and reference counts differ ({hypotheses} vs {references})")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedder failed: {0}")]
    Embedder(String),
}

/// Whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}
