//! Weight sweeps: sample a subset, build the weight-independent artifacts
//! once per record, caption at every weight, and average the metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioner::WeightConfig;
use crate::corpus::{RegionRecord, TextNormalizer};
use crate::language::Language;
use crate::metrics::{ribes, sentence_bleu, similarity_scores, Embedder, MetricError, Smoothing, DEFAULT_MAX_N};
use crate::pipeline::{Pipeline, PipelineError, Upstream};

pub const DEFAULT_SUBSET_SIZE: usize = 250;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error("cannot sample {requested} records from {available}")]
    Sample { requested: usize, available: usize },
    #[error("record {0} has no reference caption")]
    MissingReference(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("report parse error: {0}")]
    Report(String),
}

/// Which form of the caption texts the similarity embedder sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityText {
    #[default]
    Raw,
    Preprocessed,
}

impl FromStr for SimilarityText {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(SimilarityText::Raw),
            "preprocessed" => Ok(SimilarityText::Preprocessed),
            other => Err(ExperimentError::Config(format!(
                "unknown similarity text form `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub subset_size: usize,
    pub seed: u64,
    pub weights: Vec<u32>,
    pub language: Language,
    pub smoothing: Smoothing,
    pub max_n: usize,
    pub include_ribes: bool,
    pub similarity_text: SimilarityText,
    /// Worker threads for record-level parallelism.
    pub jobs: usize,
}

impl SweepConfig {
    pub fn new(language: Language, seed: u64) -> Self {
        SweepConfig {
            subset_size: DEFAULT_SUBSET_SIZE,
            seed,
            weights: default_weights(),
            language,
            smoothing: Smoothing::default(),
            max_n: DEFAULT_MAX_N,
            include_ribes: false,
            similarity_text: SimilarityText::Raw,
            jobs: 4,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.subset_size == 0 {
            return Err(ExperimentError::Config("subset size must be at least 1".into()));
        }
        if self.weights.is_empty() {
            return Err(ExperimentError::Config("no weights given".into()));
        }
        if let Some(w) = self.weights.iter().find(|&&w| w > 100) {
            return Err(ExperimentError::Config(format!("weight {w} outside [0, 100]")));
        }
        if self.weights.windows(2).any(|p| p[0] >= p[1]) {
            return Err(ExperimentError::Config("weights must be strictly increasing".into()));
        }
        if self.jobs == 0 {
            return Err(ExperimentError::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn default_weights() -> Vec<u32> {
    (0..=100).step_by(10).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_weights(spec: &str) -> Result<Vec<u32>, ExperimentError> {
    let bad = |why: &str| ExperimentError::Config(format!("weights `{spec}`: {why}"));
    let num = |s: &str| s.trim().parse::<u32>().map_err(|_| bad("not an integer"));
    let weights: Vec<u32> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step == 0 {
            return Err(bad("step must be positive"));
        }
        (start..=stop).step_by(step as usize).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    if weights.is_empty() {
        return Err(bad("empty range"));
    }
    if weights.iter().any(|&w| w > 100) {
        return Err(bad("weights must lie in [0, 100]"));
    }
    if weights.windows(2).any(|p| p[0] >= p[1]) {
        return Err(bad("weights must be strictly increasing"));
    }
    Ok(weights)
}

/// A sampled record with its position in the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampled {
    pub index: usize,
    pub record: RegionRecord,
}

/// Uniform sample without replacement, deterministic in `seed`.
pub fn sample_subset(records: &[RegionRecord], n: usize, seed: u64) -> Result<Vec<Sampled>, ExperimentError> {
    if n > records.len() {
        return Err(ExperimentError::Sample {
            requested: n,
            available: records.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, records.len(), n)
        .into_iter()
        .map(|index| Sampled {
            index,
            record: records[index].clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub weight: u32,
    pub avg_bleu: f64,
    pub avg_sem_sim: f64,
    pub avg_norm_sem: f64,
    pub avg_ribes: Option<f64>,
    pub n: usize,
    pub undefined_norm_count: usize,
}

/// Per-record scores at one weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    pub index: usize,
    pub caption: String,
    pub valid: bool,
    pub bleu: f64,
    pub sem_sim: f64,
    pub norm_sem: Option<f64>,
    pub ribes: Option<f64>,
}

/// Cache keys touched at one weight, split by stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageKeys {
    pub upstream: BTreeSet<String>,
    pub caption: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<MetricRow>,
    pub scores: BTreeMap<u32, Vec<RecordScore>>,
    pub stage_keys: BTreeMap<u32, StageKeys>,
    /// (record key, weight if caption-stage, message)
    pub failures: Vec<(String, Option<u32>, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Averages per-record scores after sorting by record index, so the result
/// is independent of completion order.
pub fn aggregate(weight: u32, scores: &[RecordScore], with_ribes: bool) -> MetricRow {
    let mut sorted: Vec<&RecordScore> = scores.iter().collect();
    sorted.sort_by_key(|s| s.index);
    MetricRow {
        weight,
        avg_bleu: mean(sorted.iter().map(|s| s.bleu)),
        avg_sem_sim: mean(sorted.iter().map(|s| s.sem_sim)),
        avg_norm_sem: mean(sorted.iter().filter_map(|s| s.norm_sem)),
        avg_ribes: with_ribes.then(|| mean(sorted.iter().filter_map(|s| s.ribes))),
        n: sorted.len(),
        undefined_norm_count: sorted.iter().filter(|s| s.norm_sem.is_none()).count(),
    }
}

pub struct SweepContext<'a> {
    pub pipeline: &'a Pipeline,
    pub embedder: &'a dyn Embedder,
    pub normalizer: &'a TextNormalizer,
}

fn score_record(
    ctx: &SweepContext<'_>,
    config: &SweepConfig,
    sampled: &Sampled,
    caption: &str,
    valid: bool,
) -> Result<RecordScore, MetricError> {
    let record = &sampled.record;
    let reference = record.target_caption.as_deref().unwrap_or_default();
    let hyp = ctx.normalizer.tokens(caption);
    let refs = ctx.normalizer.tokens(reference);
    let bleu = sentence_bleu(&hyp, &refs, config.max_n, config.smoothing)?.score;
    let (gen, refr, src) = match config.similarity_text {
        SimilarityText::Raw => (
            caption.to_string(),
            reference.to_string(),
            record.english_caption.clone(),
        ),
        SimilarityText::Preprocessed => (
            ctx.normalizer.normalize(caption),
            ctx.normalizer.normalize(reference),
            ctx.normalizer.normalize(&record.english_caption),
        ),
    };
    let sim = similarity_scores(&gen, &refr, &src, ctx.embedder)?;
    let ribes = if config.include_ribes && !hyp.is_empty() && !refs.is_empty() {
        Some(ribes(&hyp, &refs)?.score)
    } else {
        None
    };
    Ok(RecordScore {
        index: sampled.index,
        caption: caption.to_string(),
        valid,
        bleu,
        sem_sim: sim.sem_sim,
        norm_sem: sim.norm_sem,
        ribes,
    })
}

/// Runs the sweep over records of `config.language` in `corpus`.
///
/// Per-record failures are logged and excluded; configuration errors abort.
pub fn run_sweep(
    config: &SweepConfig,
    corpus: &[RegionRecord],
    ctx: &SweepContext<'_>,
) -> Result<SweepResult, ExperimentError> {
    config.validate()?;
    let pool: Vec<RegionRecord> = corpus
        .iter()
        .filter(|r| r.language == config.language)
        .cloned()
        .collect();
    if let Some(r) = pool.iter().find(|r| r.target_caption.is_none()) {
        return Err(ExperimentError::MissingReference(r.key()));
    }
    let subset = sample_subset(&pool, config.subset_size, config.seed)?;
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;

    let upstream: Vec<Result<Upstream, PipelineError>> =
        workers.install(|| subset.par_iter().map(|s| ctx.pipeline.upstream(&s.record)).collect());

    let mut failures = Vec::new();
    let mut ready: Vec<(&Sampled, Upstream)> = Vec::new();
    for (s, result) in subset.iter().zip(upstream) {
        match result {
            Ok(up) => ready.push((s, up)),
            Err(e) if e.is_config() => return Err(e.into()),
            Err(e) => {
                tracing::warn!(record = %s.record.key(), "excluded: {e}");
                failures.push((s.record.key(), None, e.to_string()));
            }
        }
    }

    let mut rows = Vec::new();
    let mut scores = BTreeMap::new();
    let mut stage_keys = BTreeMap::new();
    for &w in &config.weights {
        let weights = WeightConfig::new(w).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let outcomes: Vec<_> = workers.install(|| {
            ready
                .par_iter()
                .map(|(s, up)| ctx.pipeline.caption(&s.record, up, weights))
                .collect()
        });
        let mut keys = StageKeys::default();
        let mut per_weight = Vec::new();
        for ((s, _), outcome) in ready.iter().zip(outcomes) {
            let caption = match outcome {
                Ok(c) => c,
                Err(e) if e.is_config() => return Err(e.into()),
                Err(e) => {
                    tracing::warn!(record = %s.record.key(), weight = w, "excluded: {e}");
                    failures.push((s.record.key(), Some(w), e.to_string()));
                    continue;
                }
            };
            if let Some((last, rest)) = caption.provenance.split_last() {
                keys.caption.insert(last.clone());
                keys.upstream.extend(rest.iter().cloned());
            }
            match score_record(ctx, config, s, &caption.text, caption.valid) {
                Ok(score) => per_weight.push(score),
                Err(e) => {
                    tracing::warn!(record = %s.record.key(), weight = w, "unscored: {e}");
                    failures.push((s.record.key(), Some(w), e.to_string()));
                }
            }
        }
        per_weight.sort_by_key(|s| s.index);
        rows.push(aggregate(w, &per_weight, config.include_ribes));
        scores.insert(w, per_weight);
        stage_keys.insert(w, keys);
    }
    Ok(SweepResult {
        rows,
        scores,
        stage_keys,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(ExperimentError::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Parsed report: header metadata plus rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<MetricRow>,
}

const UNDEFINED_KEY: &str = "undefined_norm_count";

fn fmt_value(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.decimals$}")
    }
}

/// Renders rows as a table. BLEU is shown ×100 like the usual tables; the
/// per-row count of undefined normalized scores goes into the header.
pub fn emit_report(rows: &[MetricRow], format: ReportFormat, meta: &[(String, String)]) -> String {
    let with_ribes = rows.iter().any(|r| r.avg_ribes.is_some());
    let mut header = vec!["Weight", "BLEU", "Sem. Sim.", "Norm. Sem.", "N"];
    if with_ribes {
        header.push("RIBES");
    }
    let mut out = String::new();
    let mut meta_lines: Vec<(String, String)> = meta.to_vec();
    meta_lines.push((
        UNDEFINED_KEY.into(),
        rows.iter()
            .map(|r| r.undefined_norm_count.to_string())
            .collect::<Vec<_>>()
            .join(","),
    ));
    for (k, v) in &meta_lines {
        let _ = writeln!(out, "# {k}: {v}");
    }
    let cells = |r: &MetricRow| {
        let mut c = vec![
            r.weight.to_string(),
            fmt_value(r.avg_bleu * 100.0, 2),
            fmt_value(r.avg_sem_sim, 4),
            fmt_value(r.avg_norm_sem, 4),
            r.n.to_string(),
        ];
        if with_ribes {
            c.push(fmt_value(r.avg_ribes.unwrap_or(f64::NAN), 4));
        }
        c
    };
    match format {
        ReportFormat::Tsv => {
            let _ = writeln!(out, "{}", header.join("\t"));
            for r in rows {
                let _ = writeln!(out, "{}", cells(r).join("\t"));
            }
        }
        ReportFormat::Markdown => {
            out.push('\n');
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for r in rows {
                let _ = writeln!(out, "| {} |", cells(r).join(" | "));
            }
        }
    }
    out
}

fn parse_value(s: &str) -> Result<f64, ExperimentError> {
    if s == "NA" {
        return Ok(f64::NAN);
    }
    s.parse()
        .map_err(|_| ExperimentError::Report(format!("bad number `{s}`")))
}

/// Reads either format back.
pub fn parse_report(text: &str) -> Result<Report, ExperimentError> {
    let mut meta = Vec::new();
    let mut table: Vec<Vec<String>> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest
                .split_once(": ")
                .ok_or_else(|| ExperimentError::Report(format!("bad header line `{line}`")))?;
            meta.push((k.to_string(), v.to_string()));
        } else if line.trim().is_empty() || line.starts_with("|---") {
            continue;
        } else if line.starts_with('|') {
            let inner = line.trim().trim_start_matches('|').trim_end_matches('|');
            table.push(inner.split('|').map(|c| c.trim().to_string()).collect());
        } else {
            table.push(line.split('\t').map(str::to_string).collect());
        }
    }
    let (head, body) = table
        .split_first()
        .ok_or_else(|| ExperimentError::Report("missing table header".into()))?;
    if head.len() < 5 || head[0] != "Weight" {
        return Err(ExperimentError::Report("unexpected table header".into()));
    }
    let with_ribes = head.len() > 5;
    let undefined: Vec<usize> = match meta.iter().position(|(k, _)| k == UNDEFINED_KEY) {
        Some(i) => {
            let (_, v) = meta.remove(i);
            v.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| ExperimentError::Report(format!("bad count `{s}`")))
                })
                .collect::<Result<_, _>>()?
        }
        None => vec![0; body.len()],
    };
    if undefined.len() != body.len() {
        return Err(ExperimentError::Report("undefined_norm_count length mismatch".into()));
    }
    let rows = body
        .iter()
        .zip(undefined)
        .map(|(c, undefined_norm_count)| {
            if c.len() != head.len() {
                return Err(ExperimentError::Report(format!("row has {} cells", c.len())));
            }
            let int = |s: &str| {
                s.parse()
                    .map_err(|_| ExperimentError::Report(format!("bad integer `{s}`")))
            };
            Ok(MetricRow {
                weight: int(&c[0])? as u32,
                avg_bleu: parse_value(&c[1])? / 100.0,
                avg_sem_sim: parse_value(&c[2])?,
                avg_norm_sem: parse_value(&c[3])?,
                n: int(&c[4])?,
                avg_ribes: if with_ribes { Some(parse_value(&c[5])?) } else { None },
                undefined_norm_count,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Report { meta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Region;
    use crate::gateway::{BackendLimits, Gateway, ResponseCache};
    use crate::imaging::ImageSource;
    use crate::metrics::HashEmbedder;
    use crate::pipeline::{with_mock, StageAssignments};
    use crate::Split;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn records(n: usize) -> Vec<RegionRecord> {
        (0..n)
            .map(|i| RegionRecord {
                image_id: format!("img{i}"),
                region: Region::new(i as i64, 2, 8, 8, Default::default()).unwrap(),
                english_caption: format!("a small red cup number {i} on the table"),
                target_caption: Some(format!("मेज पर लाल कप {i}")),
                language: Language::Hi,
                split: Split::Train,
            })
            .collect()
    }

    #[test]
    fn weight_specs() {
        assert_eq!(parse_weights("0:100:10").unwrap(), default_weights());
        assert_eq!(parse_weights("0, 50,100").unwrap(), vec![0, 50, 100]);
        assert_eq!(parse_weights("0:100:30").unwrap(), vec![0, 30, 60, 90]);
        assert!(parse_weights("50,10").is_err());
        assert!(parse_weights("0:120:60").is_err());
        assert!(parse_weights("0:100:0").is_err());
        assert!(parse_weights("a").is_err());
    }

    #[test]
    fn sampling_contract() {
        let rs = records(1000);
        let a = sample_subset(&rs, 250, 42).unwrap();
        assert_eq!(a, sample_subset(&rs, 250, 42).unwrap());
        assert_ne!(a, sample_subset(&rs, 250, 43).unwrap());
        assert!(a.iter().all(|s| rs[s.index] == s.record));
        let all = sample_subset(&rs[..20], 20, 1).unwrap();
        let mut idx: Vec<usize> = all.iter().map(|s| s.index).collect();
        idx.sort();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
        assert!(matches!(
            sample_subset(&rs[..3], 4, 1),
            Err(ExperimentError::Sample { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = SweepConfig::new(Language::Hi, 1);
        assert!(c.validate().is_ok());
        c.weights = vec![10, 10];
        assert!(c.validate().is_err());
        c.weights = vec![0];
        c.subset_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn offline_sweep_is_deterministic_and_weight_independent_upstream() {
        let rs = records(12);
        let run = || {
            let gw = Arc::new(
                with_mock(
                    Gateway::builder(ResponseCache::in_memory()),
                    1,
                    BackendLimits::default(),
                )
                .build(),
            );
            let pipeline = Pipeline::new(gw.clone(), &StageAssignments::offline(), ImageSource::Synthetic);
            let embedder = HashEmbedder::default();
            let normalizer = TextNormalizer::default();
            let ctx = SweepContext {
                pipeline: &pipeline,
                embedder: &embedder,
                normalizer: &normalizer,
            };
            let mut config = SweepConfig::new(Language::Hi, 1);
            config.subset_size = 5;
            config.include_ribes = true;
            (run_sweep(&config, &rs, &ctx).unwrap(), gw.stats())
        };
        let (a, stats) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 11);
        assert!(a.rows.iter().all(|r| r.n == 5));
        let first = &a.stage_keys[&0];
        assert!(!first.upstream.is_empty());
        for keys in a.stage_keys.values() {
            assert_eq!(keys.upstream, first.upstream);
            assert!(keys.caption.is_disjoint(&first.caption) || keys == first);
        }
        // upstream once per record, one caption per record per weight
        let upstream_calls = first.upstream.len() as u64;
        assert_eq!(stats.backend_calls, upstream_calls + 11 * 5);
    }

    #[test]
    fn missing_reference_is_rejected() {
        let mut rs = records(3);
        rs[1].target_caption = None;
        let gw = Arc::new(
            with_mock(
                Gateway::builder(ResponseCache::in_memory()),
                1,
                BackendLimits::default(),
            )
            .build(),
        );
        let pipeline = Pipeline::new(gw, &StageAssignments::offline(), ImageSource::None);
        let embedder = HashEmbedder::default();
        let normalizer = TextNormalizer::default();
        let ctx = SweepContext {
            pipeline: &pipeline,
            embedder: &embedder,
            normalizer: &normalizer,
        };
        let mut config = SweepConfig::new(Language::Hi, 1);
        config.subset_size = 2;
        assert!(matches!(
            run_sweep(&config, &rs, &ctx),
            Err(ExperimentError::MissingReference(_))
        ));
    }

    fn score(index: usize, bleu: f64, norm: Option<f64>) -> RecordScore {
        RecordScore {
            index,
            caption: String::new(),
            valid: true,
            bleu,
            sem_sim: bleu / 2.0,
            norm_sem: norm,
            ribes: None,
        }
    }

    #[test]
    fn undefined_norm_is_excluded_and_counted() {
        let row = aggregate(
            10,
            &[score(0, 0.5, Some(0.9)), score(1, 0.3, None), score(2, 0.1, Some(0.7))],
            false,
        );
        assert_eq!(row.n, 3);
        assert_eq!(row.undefined_norm_count, 1);
        assert!((row.avg_norm_sem - 0.8).abs() < 1e-12);
        assert!((row.avg_bleu - 0.3).abs() < 1e-12);
    }

    fn row() -> impl Strategy<Value = MetricRow> {
        (
            0u32..=100,
            0.0f64..1.0,
            -1.0f64..1.0,
            0.0f64..2.0,
            0usize..300,
            0usize..5,
            prop::option::of(0.0f64..1.0),
        )
            .prop_map(
                |(weight, avg_bleu, avg_sem_sim, avg_norm_sem, n, undefined_norm_count, avg_ribes)| MetricRow {
                    weight,
                    avg_bleu,
                    avg_sem_sim,
                    avg_norm_sem,
                    avg_ribes,
                    n,
                    undefined_norm_count,
                },
            )
    }

    proptest! {
        #[test]
        fn report_round_trip(mut rows in prop::collection::vec(row(), 1..12), md in any::<bool>()) {
            let ribes = rows[0].avg_ribes.is_some();
            for r in rows.iter_mut() {
                if !ribes { r.avg_ribes = None } else if r.avg_ribes.is_none() { r.avg_ribes = Some(0.5) }
            }
            let meta = vec![("seed".to_string(), "42".to_string())];
            let fmt = if md { ReportFormat::Markdown } else { ReportFormat::Tsv };
            let text = emit_report(&rows, fmt, &meta);
            let parsed = parse_report(&text).unwrap();
            prop_assert_eq!(&parsed.meta, &meta);
            prop_assert_eq!(parsed.rows.len(), rows.len());
            for (p, r) in parsed.rows.iter().zip(&rows) {
                prop_assert_eq!((p.weight, p.n, p.undefined_norm_count), (r.weight, r.n, r.undefined_norm_count));
                prop_assert!((p.avg_bleu - r.avg_bleu).abs() <= 5e-5 + 1e-12);
                prop_assert!((p.avg_sem_sim - r.avg_sem_sim).abs() <= 5e-5 + 1e-12);
                prop_assert!((p.avg_norm_sem - r.avg_norm_sem).abs() <= 5e-5 + 1e-12);
                if let (Some(a), Some(b)) = (p.avg_ribes, r.avg_ribes) {
                    prop_assert!((a - b).abs() <= 5e-5 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn markdown_has_five_columns() {
        let rows = vec![aggregate(0, &[score(0, 0.5, Some(1.0))], false)];
        let md = emit_report(&rows, ReportFormat::Markdown, &[]);
        let table: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(table.len(), 3);
        assert!(table.iter().all(|l| l.matches('|').count() == 6));
        assert!(table[0].contains("| Weight | BLEU | Sem. Sim. | Norm. Sem. | N |"));
    }
}
