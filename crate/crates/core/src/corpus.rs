//! Region-caption corpus ingestion, text preprocessing and corpus statistics.
//!
//! Corpus files are tab-separated with seven columns:
//! `image_id, x, y, width, height, english, target`. The target column may be
//! empty (or absent) for inference-only splits. A header line is optional.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::language::{Language, Split};

pub const CORPUS_COLUMNS: usize = 7;

static UNICODE_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").unwrap());

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} tab-separated fields, found {found}")]
    FieldCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: column `{column}` is not an integer: {value:?}")]
    Geometry {
        line: usize,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: region must have width >= 1 and height >= 1, got {width}x{height}")]
    EmptyRegion { line: usize, width: i64, height: i64 },
    #[error("line {line}: empty image id")]
    EmptyImageId { line: usize },
    #[error("line {line}: empty English caption")]
    EmptyCaption { line: usize },
}

/// Corner the region's `(x, y)` is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    #[default]
    BottomLeft,
    TopLeft,
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bottom-left" | "bottomleft" => Ok(Origin::BottomLeft),
            "top-left" | "topleft" => Ok(Origin::TopLeft),
            other => Err(format!(
                "unknown region origin `{other}` (expected bottom-left or top-left)"
            )),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::BottomLeft => "bottom-left",
            Origin::TopLeft => "top-left",
        })
    }
}

/// Rectangular image region in integer pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
    pub origin: Origin,
}

impl Region {
    /// Returns `None` for a region with zero width or height.
    pub fn new(x: i64, y: i64, width: u32, height: u32, origin: Origin) -> Option<Region> {
        (width >= 1 && height >= 1).then_some(Region {
            x,
            y,
            width,
            height,
            origin,
        })
    }

    /// `x_y_w_h`, used in artifact file names and output tables.
    pub fn slug(&self) -> String {
        format!("{}_{}_{}_{}", self.x, self.y, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub image_id: String,
    pub region: Region,
    pub english_caption: String,
    pub target_caption: Option<String>,
    pub language: Language,
    pub split: Split,
}

impl RegionRecord {
    /// Stable identifier of the record: image id plus region slug.
    pub fn key(&self) -> String {
        format!("{}_{}", self.image_id, self.region.slug())
    }
}

/// Characters stripped by [`TextNormalizer`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunctuationSet {
    /// Strip every character in the Unicode `P*` general categories.
    pub unicode: bool,
    /// Additional characters stripped regardless of category.
    pub extra: BTreeSet<char>,
}

impl Default for PunctuationSet {
    fn default() -> Self {
        PunctuationSet {
            unicode: true,
            // Devanagari danda and double danda.
            extra: ['\u{0964}', '\u{0965}'].into_iter().collect(),
        }
    }
}

impl PunctuationSet {
    /// A set made of exactly the given characters, with no Unicode categories.
    pub fn custom(chars: &str) -> Self {
        PunctuationSet {
            unicode: false,
            extra: chars.chars().collect(),
        }
    }

    pub fn contains(&self, c: char) -> bool {
        if self.extra.contains(&c) {
            return true;
        }
        if self.unicode {
            let mut buf = [0u8; 4];
            return UNICODE_PUNCT.is_match(c.encode_utf8(&mut buf));
        }
        false
    }

    pub fn describe(&self) -> String {
        let extra: String = self.extra.iter().collect();
        match (self.unicode, extra.is_empty()) {
            (true, true) => "unicode-P".to_string(),
            (true, false) => format!("unicode-P+{extra}"),
            (false, _) => format!("custom:{extra}"),
        }
    }
}

/// Lowercasing, punctuation removal and whitespace collapsing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextNormalizer {
    pub punctuation: PunctuationSet,
}

impl TextNormalizer {
    pub fn new(punctuation: PunctuationSet) -> Self {
        TextNormalizer { punctuation }
    }

    pub fn normalize(&self, text: &str) -> String {
        let stripped: String = if self.punctuation.unicode && self.punctuation.extra.is_empty() {
            UNICODE_PUNCT.replace_all(text, "").into_owned()
        } else {
            text.chars().filter(|&c| !self.punctuation.contains(c)).collect()
        };
        let lowered = stripped.to_lowercase();
        lowered.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    pub fn tokens(&self, text: &str) -> Vec<String> {
        self.normalize(text)
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn word_count(&self, text: &str) -> usize {
        self.normalize(text).split_whitespace().count()
    }

    pub fn describe(&self) -> String {
        format!("lowercase; strip {}; whitespace tokens", self.punctuation.describe())
    }
}

/// Lowercases, strips punctuation and collapses whitespace with the default
/// punctuation set.
pub fn preprocess_text(text: &str) -> String {
    TextNormalizer::default().normalize(text)
}

/// Whitespace token count after [`preprocess_text`].
pub fn word_count(caption: &str) -> usize {
    TextNormalizer::default().word_count(caption)
}

pub fn parse_corpus(
    path: &Path,
    language: Language,
    split: Split,
    origin: Origin,
) -> Result<Vec<RegionRecord>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus_str(&text, language, split, origin)
}

pub fn parse_corpus_str(
    text: &str,
    language: Language,
    split: Split,
    origin: Origin,
) -> Result<Vec<RegionRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen_data = false;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !seen_data && looks_like_header(&fields) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        // The target column may be dropped entirely for inference-only splits.
        if fields.len() != CORPUS_COLUMNS && fields.len() != CORPUS_COLUMNS - 1 {
            return Err(CorpusError::FieldCount {
                line: line_no,
                expected: CORPUS_COLUMNS,
                found: fields.len(),
            });
        }
        let int = |i: usize, column: &'static str| -> Result<i64, CorpusError> {
            fields[i].trim().parse::<i64>().map_err(|_| CorpusError::Geometry {
                line: line_no,
                column,
                value: fields[i].to_string(),
            })
        };
        let x = int(1, "x")?;
        let y = int(2, "y")?;
        let width = int(3, "width")?;
        let height = int(4, "height")?;
        let region = u32::try_from(width)
            .ok()
            .zip(u32::try_from(height).ok())
            .and_then(|(w, h)| Region::new(x, y, w, h, origin))
            .ok_or(CorpusError::EmptyRegion {
                line: line_no,
                width,
                height,
            })?;
        let image_id = fields[0].trim();
        if image_id.is_empty() {
            return Err(CorpusError::EmptyImageId { line: line_no });
        }
        let english = fields[5];
        if english.trim().is_empty() {
            return Err(CorpusError::EmptyCaption { line: line_no });
        }
        let target = fields.get(6).filter(|t| !t.trim().is_empty()).map(|t| t.to_string());
        records.push(RegionRecord {
            image_id: image_id.to_string(),
            region,
            english_caption: english.to_string(),
            target_caption: target,
            language,
            split,
        });
    }
    Ok(records)
}

fn looks_like_header(fields: &[&str]) -> bool {
    fields.len() >= 5 && fields[1..5].iter().all(|f| f.trim().parse::<i64>().is_err())
}

/// Writes records back in the seven-column layout, without a header.
pub fn serialize_corpus(records: &[RegionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.image_id,
            r.region.x,
            r.region.y,
            r.region.width,
            r.region.height,
            r.english_caption,
            r.target_caption.as_deref().unwrap_or("")
        );
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsEntry {
    pub sentence_count: usize,
    pub english_tokens: usize,
    pub target_tokens: usize,
    /// Records without a target caption; they contribute 0 target tokens.
    pub missing_targets: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub entries: BTreeMap<(Split, Language), StatsEntry>,
    /// Which preprocessing produced the token counts.
    pub preprocessing: String,
}

impl CorpusStats {
    pub fn get(&self, split: Split, language: Language) -> StatsEntry {
        self.entries.get(&(split, language)).copied().unwrap_or_default()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.missing_targets > 0)
            .map(|((split, lang), e)| {
                format!(
                    "{split}/{lang}: {} of {} records have no target caption; counted as 0 tokens",
                    e.missing_targets, e.sentence_count
                )
            })
            .collect()
    }

    /// Renders a table with one row per split: sentence count, English tokens,
    /// then target tokens for every language present.
    pub fn render(&self, tsv: bool) -> String {
        let languages: BTreeSet<Language> = self.entries.keys().map(|(_, l)| *l).collect();
        let splits: BTreeSet<Split> = self.entries.keys().map(|(s, _)| *s).collect();
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Set".to_string(), "Sentences".to_string(), "English".to_string()];
        header.extend(languages.iter().map(|l| l.name().to_string()));
        rows.push(header);
        for split in &splits {
            let first = languages
                .iter()
                .map(|l| self.get(*split, *l))
                .find(|e| e.sentence_count > 0)
                .unwrap_or_default();
            let mut row = vec![
                split.label().to_string(),
                first.sentence_count.to_string(),
                first.english_tokens.to_string(),
            ];
            row.extend(languages.iter().map(|l| self.get(*split, *l).target_tokens.to_string()));
            rows.push(row);
        }

        let mut out = format!("# preprocessing: {}\n", self.preprocessing);
        if tsv {
            for row in rows {
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        } else {
            let ncols = rows[0].len();
            let widths: Vec<usize> = (0..ncols)
                .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
                .collect();
            for row in rows {
                let cells: Vec<String> = row
                    .iter()
                    .enumerate()
                    .map(|(c, cell)| {
                        let pad = widths[c] - cell.chars().count();
                        if c == 0 {
                            format!("{cell}{}", " ".repeat(pad))
                        } else {
                            format!("{}{cell}", " ".repeat(pad))
                        }
                    })
                    .collect();
                out.push_str(cells.join("  ").trim_end());
                out.push('\n');
            }
        }
        out
    }
}

pub fn compute_stats(records: &[RegionRecord], normalizer: &TextNormalizer) -> CorpusStats {
    let mut entries: BTreeMap<(Split, Language), StatsEntry> = BTreeMap::new();
    for r in records {
        let e = entries.entry((r.split, r.language)).or_default();
        e.sentence_count += 1;
        e.english_tokens += normalizer.word_count(&r.english_caption);
        match &r.target_caption {
            Some(t) => e.target_tokens += normalizer.word_count(t),
            None => e.missing_targets += 1,
        }
    }
    let stats = CorpusStats {
        entries,
        preprocessing: normalizer.describe(),
    };
    for w in stats.warnings() {
        tracing::warn!("{w}");
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SOAP: &str = "img1\t10\t20\t50\t40\tsoap is in the dish\tसाबुन पकवान में है\n\
                        img2\t0\t0\t5\t5\ta red bus\tएक लाल बस\n";

    #[test]
    fn parses_two_line_tsv() {
        let recs = parse_corpus_str(SOAP, Language::Hi, Split::Train, Origin::BottomLeft).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].english_caption, "soap is in the dish");
        assert_eq!(recs[0].target_caption.as_deref(), Some("साबुन पकवान में है"));
        assert_eq!(recs[0].region, Region::new(10, 20, 50, 40, Origin::BottomLeft).unwrap());
        assert_eq!(recs[1].image_id, "img2");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let recs = parse_corpus_str("", Language::Hi, Split::Train, Origin::BottomLeft).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn wrong_field_count_names_the_line() {
        let text = format!("{SOAP}img3\t1\t2\t3\tcaption\n");
        let err = parse_corpus_str(&text, Language::Hi, Split::Train, Origin::BottomLeft).unwrap_err();
        match err {
            CorpusError::FieldCount { line, found, .. } => {
                assert_eq!(line, 3);
                assert_eq!(found, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_integer_geometry_and_empty_caption_are_errors() {
        let bad = "img\t1\tx2\t3\t4\tcap\tt\n";
        // A single malformed line at the top would be mistaken for a header only
        // if all four geometry columns were non-numeric.
        assert!(matches!(
            parse_corpus_str(bad, Language::Hi, Split::Train, Origin::TopLeft),
            Err(CorpusError::Geometry {
                line: 1,
                column: "y",
                ..
            })
        ));
        let empty = "img\t1\t2\t3\t4\t  \tt\n";
        assert!(matches!(
            parse_corpus_str(empty, Language::Hi, Split::Train, Origin::TopLeft),
            Err(CorpusError::EmptyCaption { line: 1 })
        ));
        let zero = "img\t1\t2\t0\t4\tcap\tt\n";
        assert!(matches!(
            parse_corpus_str(zero, Language::Hi, Split::Train, Origin::TopLeft),
            Err(CorpusError::EmptyRegion { line: 1, .. })
        ));
    }

    #[test]
    fn header_is_detected_and_target_is_optional() {
        let text = "image_id\tX\tY\tWidth\tHeight\tEnglish\tHindi\nimg\t1\t2\t3\t4\tcap\t\nimg\t1\t2\t3\t4\tcap\n";
        let recs = parse_corpus_str(text, Language::Hi, Split::Ctest, Origin::TopLeft).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.target_caption.is_none()));
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess_text("Soap is in the Dish!"), "soap is in the dish");
        assert_eq!(preprocess_text(""), "");
        assert_eq!(preprocess_text("साबुन, पकवान में है।"), "साबुन पकवान में है");
        assert_eq!(preprocess_text("  two\t\tspaces \n here "), "two spaces here");
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count("soap is in the dish"), 5);
        assert_eq!(word_count(""), 0);
        assert_eq!(
            word_count("A group of people standing outside of a black SUV with various luggage."),
            13
        );
    }

    #[test]
    fn custom_punctuation_set() {
        let n = TextNormalizer::new(PunctuationSet::custom("!"));
        assert_eq!(n.normalize("Hi, there!"), "hi, there");
    }

    #[test]
    fn stats_examples() {
        let recs = parse_corpus_str(
            "a\t0\t0\t1\t1\tsoap is in the dish\tx y z\nb\t0\t0\t1\t1\ta red bus\t\n",
            Language::Hi,
            Split::Train,
            Origin::TopLeft,
        )
        .unwrap();
        let stats = compute_stats(&recs, &TextNormalizer::default());
        let e = stats.get(Split::Train, Language::Hi);
        assert_eq!(e.sentence_count, 2);
        assert_eq!(e.english_tokens, 8);
        assert_eq!(e.target_tokens, 3);
        assert_eq!(e.missing_targets, 1);
        assert_eq!(stats.warnings().len(), 1);

        let empty = compute_stats(&[], &TextNormalizer::default());
        assert_eq!(empty.get(Split::Train, Language::Hi), StatsEntry::default());
    }

    #[test]
    fn stats_table_shape() {
        let recs = parse_corpus_str(SOAP, Language::Hi, Split::Train, Origin::TopLeft).unwrap();
        let table = compute_stats(&recs, &TextNormalizer::default()).render(true);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("# preprocessing:"));
        assert_eq!(lines[1], "Set\tSentences\tEnglish\tHindi");
        assert_eq!(lines[2], "Train\t2\t8\t7");
    }

    fn arb_record() -> impl Strategy<Value = RegionRecord> {
        (
            "[a-z0-9]{1,8}",
            -50i64..500,
            -50i64..500,
            1u32..300,
            1u32..300,
            "[A-Za-z][A-Za-z ,.!]{0,30}",
            proptest::option::of("[a-z\u{0900}-\u{094F}][a-z \u{0900}-\u{094F}]{0,20}"),
        )
            .prop_map(|(id, x, y, w, h, en, tgt)| RegionRecord {
                image_id: id,
                region: Region::new(x, y, w, h, Origin::BottomLeft).unwrap(),
                english_caption: en,
                target_caption: tgt.filter(|t| !t.trim().is_empty()),
                language: Language::Hi,
                split: Split::Dtest,
            })
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(s in "\\PC{0,40}") {
            let once = preprocess_text(&s);
            prop_assert_eq!(preprocess_text(&once), once);
        }

        #[test]
        fn word_count_stable_without_attached_punctuation(words in proptest::collection::vec("[a-zA-Z]{1,6}", 0..8), punct in proptest::collection::vec("[!?,.;]", 0..8)) {
            // Punctuation only appears as standalone tokens here.
            let mut parts: Vec<String> = words.clone();
            parts.extend(punct.iter().cloned());
            let s = parts.join(" ");
            prop_assert_eq!(word_count(&preprocess_text(&s)), word_count(&s));
            prop_assert_eq!(word_count(&s), words.len());
        }

        #[test]
        fn corpus_round_trips(records in proptest::collection::vec(arb_record(), 0..12)) {
            let text = serialize_corpus(&records);
            let parsed = parse_corpus_str(&text, Language::Hi, Split::Dtest, Origin::BottomLeft).unwrap();
            prop_assert_eq!(parsed, records);
        }

        #[test]
        fn stats_are_permutation_invariant(records in proptest::collection::vec(arb_record(), 0..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let n = TextNormalizer::default();
            prop_assert_eq!(compute_stats(&records, &n), compute_stats(&shuffled, &n));
        }
    }
}
