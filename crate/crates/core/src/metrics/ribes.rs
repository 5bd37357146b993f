use serde::{Deserialize, Serialize};

use super::MetricError;

pub const RIBES_ALPHA: f64 = 0.25;
pub const RIBES_BETA: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RibesScore {
    pub score: f64,
    pub nkt: f64,
    pub unigram_precision: f64,
    pub bp: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn occurrences(haystack: &[&str], needle: &[&str]) -> (usize, Option<usize>) {
    if needle.len() > haystack.len() {
        return (0, None);
    }
    let mut count = 0;
    let mut first = None;
    for (i, w) in haystack.windows(needle.len()).enumerate() {
        if w == needle {
            count += 1;
            first.get_or_insert(i);
        }
    }
    (count, first)
}

/// Aligns each hypothesis word to a reference position.
///
/// A word occurring exactly once on both sides aligns directly. Otherwise
/// context windows around it are tried, smallest first, left context before
/// right before two-sided, until one occurs exactly once on both sides.
/// Words that stay ambiguous, or whose target position is already taken,
/// remain unaligned.
pub fn align<T: AsRef<str>>(hypothesis: &[T], reference: &[T]) -> Vec<Option<usize>> {
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut taken = vec![false; reference.len()];
    let mut out = Vec::with_capacity(hyp.len());
    for i in 0..hyp.len() {
        let pos = locate(&hyp, &reference, i).filter(|&p| !taken[p]);
        if let Some(p) = pos {
            taken[p] = true;
        }
        out.push(pos);
    }
    out
}

fn locate(hyp: &[&str], reference: &[&str], i: usize) -> Option<usize> {
    let (in_ref, _) = occurrences(reference, &hyp[i..=i]);
    if in_ref == 0 {
        return None;
    }
    for width in 0..hyp.len() {
        let mut shapes = Vec::new();
        if width == 0 {
            shapes.push((0, 0));
        } else {
            shapes.push((width, 0));
            shapes.push((0, width));
            shapes.extend((1..width).rev().map(|l| (l, width - l)));
        }
        for (left, right) in shapes {
            if left > i || i + right >= hyp.len() {
                continue;
            }
            let gram = &hyp[i - left..=i + right];
            let (in_hyp, _) = occurrences(hyp, gram);
            let (in_ref, at) = occurrences(reference, gram);
            if in_hyp == 1 && in_ref == 1 {
                return at.map(|start| start + left);
            }
        }
    }
    None
}

/// Kendall's tau over distinct ranks; `None` with fewer than two.
pub fn kendall_tau(ranks: &[usize]) -> Option<f64> {
    let n = ranks.len();
    if n < 2 {
        return None;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if ranks[i] < ranks[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    Some((concordant - discordant) as f64 / total)
}

/// Normalized Kendall's tau, (tau + 1) / 2.
pub fn nkt(ranks: &[usize]) -> Option<f64> {
    kendall_tau(ranks).map(|t| (t + 1.0) / 2.0)
}

pub fn ribes<T: AsRef<str>>(hypothesis: &[T], reference: &[T]) -> Result<RibesScore, MetricError> {
    ribes_with(hypothesis, reference, RIBES_ALPHA, RIBES_BETA)
}

pub fn ribes_with<T: AsRef<str>>(
    hypothesis: &[T],
    reference: &[T],
    alpha: f64,
    beta: f64,
) -> Result<RibesScore, MetricError> {
    if hypothesis.is_empty() {
        return Err(MetricError::EmptyInput("hypothesis"));
    }
    if reference.is_empty() {
        return Err(MetricError::EmptyInput("reference"));
    }
    let ranks: Vec<usize> = align(hypothesis, reference).into_iter().flatten().collect();
    let c = hypothesis.len() as f64;
    let r = reference.len() as f64;
    let unigram_precision = ranks.len() as f64 / c;
    let bp = (1.0 - r / c).exp().min(1.0);
    // A one-word hypothesis matching a one-word reference has no pairs to
    // disagree on; every other case with under two alignments scores zero.
    let single_exact = hypothesis.len() == 1 && reference.len() == 1 && ranks.len() == 1;
    let nkt = match nkt(&ranks) {
        Some(v) => v,
        None if single_exact => 1.0,
        None => 0.0,
    };
    let score = if nkt == 0.0 {
        0.0
    } else {
        nkt * unigram_precision.powf(alpha) * bp.powf(beta)
    };
    Ok(RibesScore {
        score,
        nkt,
        unigram_precision,
        bp,
        alpha,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn worked_examples() {
        let rev = ribes(&t("b a"), &t("a b")).unwrap();
        assert_eq!(rev.nkt, 0.0);
        assert_eq!(rev.score, 0.0);
        let swap = ribes(&t("a c b"), &t("a b c")).unwrap();
        assert!((swap.nkt - 2.0 / 3.0).abs() < 1e-12);
        assert!((swap.score - 0.6667).abs() < 1e-4);
        assert_eq!(ribes(&t("a"), &t("a")).unwrap().score, 1.0);
        assert_eq!(ribes(&t("a"), &t("b")).unwrap().score, 0.0);
    }

    #[test]
    fn ambiguous_words_use_context() {
        // "the" twice on each side: bigram context resolves it.
        assert_eq!(
            align(&t("the cat saw a dog"), &t("a dog saw the cat")),
            vec![Some(3), Some(4), Some(2), Some(0), Some(1)]
        );
        assert_eq!(
            align(&t("the cat on the mat"), &t("the mat under the cat")),
            vec![Some(3), Some(4), None, Some(0), Some(1)]
        );
        // Both contexts point at the same reference word; the second loses.
        assert_eq!(
            align(&t("the cat saw the dog"), &t("the dog saw the cat")),
            vec![Some(3), Some(4), Some(2), None, Some(1)]
        );
        assert_eq!(align(&t("a a a"), &t("a a a")), vec![Some(0), Some(1), Some(2)]);
        // No context disambiguates the lone hypothesis word.
        assert_eq!(align(&t("a"), &t("a a")), vec![None]);
        assert_eq!(align(&t("x y"), &t("z")), vec![None, None]);
    }

    #[test]
    fn brevity_only_penalizes_short_hypotheses() {
        let long = ribes(&t("a b c d"), &t("a b")).unwrap();
        assert_eq!(long.bp, 1.0);
        assert_eq!(long.unigram_precision, 0.5);
        let short = ribes(&t("a b"), &t("a b c d")).unwrap();
        assert!((short.bp - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_input_rejected() {
        let e: Vec<&str> = vec![];
        assert!(ribes(&e, &t("a")).is_err());
        assert!(ribes(&t("a"), &e).is_err());
    }

    fn pairs_oracle(ranks: &[usize]) -> f64 {
        let mut c = 0.0;
        let mut d = 0.0;
        for (i, a) in ranks.iter().enumerate() {
            for b in &ranks[i + 1..] {
                if a < b {
                    c += 1.0
                } else {
                    d += 1.0
                }
            }
        }
        ((c - d) / (c + d) + 1.0) / 2.0
    }

    #[test]
    fn nkt_matches_pair_counting_exhaustively() {
        // Every sequence of length 2..=8 over 4 symbols, offset to keep ranks distinct.
        for len in 2..=8u32 {
            for code in 0..4usize.pow(len) {
                let ranks: Vec<usize> = (0..len as usize)
                    .map(|k| (code / 4usize.pow(k as u32)) % 4 * 8 + k)
                    .collect();
                assert_eq!(nkt(&ranks), Some(pairs_oracle(&ranks)));
            }
        }
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..=20)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn identity_and_bounds(h in sentence(), r in sentence()) {
            prop_assert_eq!(ribes(&h, &h).unwrap().score, 1.0);
            let s = ribes(&h, &r).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.score));
            let composed = s.nkt * s.unigram_precision.powf(s.alpha) * s.bp.powf(s.beta);
            prop_assert!((s.score - composed).abs() < 1e-12);
        }

        #[test]
        fn alignment_is_injective_and_consistent(h in sentence(), r in sentence()) {
            let a = align(&h, &r);
            let mut used: Vec<usize> = a.iter().flatten().copied().collect();
            for (i, p) in a.iter().enumerate() {
                if let Some(p) = p {
                    prop_assert_eq!(&h[i], &r[*p]);
                }
            }
            used.sort();
            used.dedup();
            prop_assert_eq!(used.len(), a.iter().flatten().count());
        }
    }
}
