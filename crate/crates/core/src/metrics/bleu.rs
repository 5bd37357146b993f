use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::MetricError;

pub const DEFAULT_MAX_N: usize = 4;

/// What replaces a zero clipped-match count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Smoothing {
    None,
    /// Zero matches at order n become `epsilon / total_n`.
    Floor {
        epsilon: f64,
    },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Floor { epsilon: 0.1 }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothing::None => f.write_str("none"),
            Smoothing::Floor { epsilon } => write!(f, "floor(epsilon={epsilon})"),
        }
    }
}

/// Clipped match and candidate counts per order, plus lengths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NgramStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_length: usize,
    pub ref_length: usize,
}

impl NgramStats {
    fn zero(max_n: usize) -> Self {
        NgramStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_length: 0,
            ref_length: 0,
        }
    }

    fn add(&mut self, other: &NgramStats) {
        for n in 0..self.matches.len() {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_length += other.hyp_length;
        self.ref_length += other.ref_length;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    /// Modified precisions for the orders that had at least one candidate
    /// n-gram; the geometric mean runs over exactly these.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_length: usize,
    pub ref_length: usize,
}

fn counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut map = HashMap::new();
    for gram in tokens.windows(n) {
        *map.entry(gram).or_insert(0) += 1;
    }
    map
}

pub fn ngram_stats<T: AsRef<str>>(hyp: &[T], reference: &[T], max_n: usize) -> NgramStats {
    let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut stats = NgramStats::zero(max_n);
    stats.hyp_length = hyp.len();
    stats.ref_length = reference.len();
    for n in 1..=max_n {
        if hyp.len() < n {
            break;
        }
        let ref_counts = counts(&reference, n);
        let hyp_counts = counts(&hyp, n);
        let total: usize = hyp_counts.values().sum();
        let clipped: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        assert!(clipped <= total, "clipped counts exceed candidate counts");
        stats.matches[n - 1] = clipped;
        stats.totals[n - 1] = total;
    }
    stats
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Orders without any candidate n-gram (hypotheses shorter than n) are left
/// out of the geometric mean rather than zeroing it.
fn score_stats(stats: &NgramStats, smoothing: Smoothing) -> BleuScore {
    let mut precisions = Vec::new();
    for (&m, &t) in stats.matches.iter().zip(&stats.totals) {
        if t == 0 {
            continue;
        }
        let p = if m > 0 {
            m as f64 / t as f64
        } else {
            match smoothing {
                Smoothing::None => 0.0,
                Smoothing::Floor { epsilon } => epsilon / t as f64,
            }
        };
        precisions.push(p);
    }
    let bp = brevity_penalty(stats.hyp_length, stats.ref_length);
    let score = if precisions.is_empty() || precisions.contains(&0.0) {
        0.0
    } else if precisions.iter().all(|&p| p == 1.0) {
        bp
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / precisions.len() as f64;
        bp * log_mean.exp()
    };
    BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        hyp_length: stats.hyp_length,
        ref_length: stats.ref_length,
    }
}

/// Corpus BLEU: clipped counts and lengths are summed over all sentences
/// before precisions and the brevity penalty are taken.
pub fn bleu_corpus<T: AsRef<str>>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuScore, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if max_n == 0 {
        return Err(MetricError::EmptyInput("max_n must be at least 1"));
    }
    let mut total = NgramStats::zero(max_n);
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&ngram_stats(h, r, max_n));
    }
    Ok(score_stats(&total, smoothing))
}

pub fn sentence_bleu<T: AsRef<str>>(
    hypothesis: &[T],
    reference: &[T],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuScore, MetricError> {
    if max_n == 0 {
        return Err(MetricError::EmptyInput("max_n must be at least 1"));
    }
    Ok(score_stats(&ngram_stats(hypothesis, reference, max_n), smoothing))
}

/// Mean of sentence-level BLEU over the pairs.
pub fn bleu_sentence_avg<T: AsRef<str>>(
    pairs: &[(Vec<T>, Vec<T>)],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut sum = 0.0;
    for (h, r) in pairs {
        sum += sentence_bleu(h, r, max_n, smoothing)?.score;
    }
    Ok(sum / pairs.len() as f64)
}
