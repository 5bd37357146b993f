//! Counts over the official Hindi training split, when available locally.
//!
//! Set `CAPCTL_HI_TRAIN` to the split's TSV path to run.

use capctl_core::corpus::{compute_stats, parse_corpus, Origin, TextNormalizer};
use capctl_core::{Language, Split};

#[test]
fn official_hindi_train_counts() {
    let Ok(path) = std::env::var("CAPCTL_HI_TRAIN") else {
        eprintln!("CAPCTL_HI_TRAIN not set; skipping");
        return;
    };
    let records = parse_corpus(path.as_ref(), Language::Hi, Split::Train, Origin::BottomLeft).unwrap();
    let stats = compute_stats(&records, &TextNormalizer::default());
    let entry = stats.get(Split::Train, Language::Hi);
    assert_eq!(entry.sentence_count, 28930);
    // Token totals depend on tokenization details; reported, not asserted.
    eprintln!("english tokens: {} (published: 143164)", entry.english_tokens);
}
