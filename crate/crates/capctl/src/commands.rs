use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use capctl_core::captioner::{validate_caption, WeightConfig};
use capctl_core::corpus::{compute_stats, parse_corpus, RegionRecord};
use capctl_core::dialogue::wordcount_probe;
use capctl_core::experiments::{emit_report, parse_weights, run_sweep, ReportFormat, SweepConfig, SweepContext};
use capctl_core::gateway::Gateway;
use capctl_core::metrics::{
    bleu_corpus, bleu_sentence_avg, ribes, similarity_scores, Embedder, RIBES_ALPHA, RIBES_BETA,
};
use capctl_core::pipeline::Pipeline;
use capctl_core::translation::{default_translator, TranslatorKind};
use capctl_core::{Language, Split};
use serde_json::json;

use crate::config::{FileConfig, Overrides, PipelineConfig};
use crate::CliError;
use crate::{
    CaptionArgs, Cli, Command, CorpusArgs, FormatArg, MetricKind, ScoreArgs, StageArgs, StatsArgs, SweepArgs,
    ValidateArgs,
};

type Env<'a> = &'a dyn Fn(&str) -> Option<String>;

const CONTEXT_STAGES: [&str; 3] = ["context_a", "context_b", "fusion"];

pub fn run(cli: Cli, env: Env<'_>, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        offline: cli.offline,
        jobs: cli.jobs,
        cache_dir: cli.cache_dir.clone(),
        mock_seed: cli.mock_seed,
    };
    let config = PipelineConfig::resolve(file, &flags)?;
    match cli.command {
        Command::Stats(a) => stats(&config, a, out),
        Command::Context(a) => context(&config, a, env, out, err),
        Command::Translate(a) => translate(&config, a, env, out, err),
        Command::Caption(a) => caption(&config, a, env, out, err),
        Command::Score(a) => score(&config, a, env, out),
        Command::Sweep(a) => sweep(&config, a, env, out, err),
        Command::Validate(a) => validate(a, &config, out),
    }
}

fn parse_lang(s: &str) -> Result<Language, CliError> {
    s.parse().map_err(|e| CliError::Config(format!("{e}")))
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse().map_err(|e| CliError::Usage(format!("{e}")))
}

fn load(config: &PipelineConfig, path: &Path, lang: Language, split: Split) -> Result<Vec<RegionRecord>, CliError> {
    parse_corpus(path, lang, split, config.origin).map_err(|e| CliError::Operational(e.to_string()))
}

fn load_records(config: &PipelineConfig, args: &CorpusArgs) -> Result<(Language, Vec<RegionRecord>), CliError> {
    let lang = parse_lang(&args.lang)?;
    let split = parse_split(&args.split)?;
    let path = match &args.input {
        Some(p) => p.clone(),
        None => config.datasets.get(&(lang, split)).cloned().ok_or_else(|| {
            CliError::Usage(format!(
                "no --in given and no dataset configured for {}/{}",
                lang.code(),
                split.code()
            ))
        })?,
    };
    Ok((lang, load(config, &path, lang, split)?))
}

/// Writes to `--out` when given, else to stdout.
fn emit(path: Option<&PathBuf>, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Operational(format!("{}: {e}", dir.display())))?;
            }
            std::fs::write(p, text).map_err(|e| CliError::Operational(format!("{}: {e}", p.display())))
        }
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Operational(format!("stdout: {e}"))),
    }
}

fn report_stats(gateway: &Gateway, err: &mut dyn Write) {
    let s = gateway.stats();
    let _ = writeln!(
        err,
        "gateway stats: requests={} cache_hits={} backend_calls={} remote_calls={}",
        s.requests, s.cache_hits, s.backend_calls, s.remote_calls
    );
}

/// Ordered map over `items` with at most `jobs` threads.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

fn translate_stage(lang: Language) -> &'static str {
    match default_translator(lang) {
        TranslatorKind::DedicatedMt => "mt",
        TranslatorKind::Llm => "llm_translate",
    }
}

fn build_pipeline(
    config: &PipelineConfig,
    stages: &[&str],
    env: Env<'_>,
) -> Result<(Arc<Gateway>, Pipeline), CliError> {
    let gateway = Arc::new(config.gateway(stages, env)?);
    let pipeline = Pipeline::new(gateway.clone(), &config.assignments(), config.image_source());
    Ok((gateway, pipeline))
}

/// Reports per-record failures; any failure makes the command exit 1.
fn finish(failed: &[(String, String)], total: usize, err: &mut dyn Write) -> Result<(), CliError> {
    for (key, msg) in failed {
        let _ = writeln!(err, "failed {key}: {msg}");
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Operational(format!(
            "{} of {total} records failed",
            failed.len()
        )))
    }
}

fn stats(config: &PipelineConfig, args: StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut datasets = config.datasets.clone();
    for spec in &args.datasets {
        let (tag, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--dataset `{spec}`: expected lang:split=path")))?;
        let (lang, split) = tag
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("--dataset `{spec}`: expected lang:split=path")))?;
        datasets.insert((parse_lang(lang)?, parse_split(split)?), PathBuf::from(path));
    }
    let lang = args.lang.as_deref().map(parse_lang).transpose()?;
    let split = args.split.as_deref().map(parse_split).transpose()?;
    if let Some(path) = &args.input {
        datasets.insert(
            (lang.unwrap_or(Language::Hi), split.unwrap_or(Split::Train)),
            path.clone(),
        );
    }
    datasets.retain(|(l, s), _| lang.is_none_or(|x| x == *l) && split.is_none_or(|x| x == *s));
    if datasets.is_empty() {
        return Err(CliError::Usage(
            "no datasets selected (use --in or --dataset lang:split=path)".into(),
        ));
    }
    let mut records = Vec::new();
    for ((lang, split), path) in &datasets {
        records.extend(load(config, path, *lang, *split)?);
    }
    let stats = compute_stats(&records, &config.normalizer());
    for w in stats.warnings() {
        tracing::warn!("{w}");
    }
    emit(args.out.as_ref(), &stats.render(args.tsv), out)
}

fn context(
    config: &PipelineConfig,
    args: StageArgs,
    env: Env<'_>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let (_, records) = load_records(config, &args.corpus)?;
    let (gateway, pipeline) = build_pipeline(config, &CONTEXT_STAGES, env)?;
    let results = parallel_map(&records, config.jobs, |r| pipeline.context(r));
    let mut text = String::new();
    let mut failed = Vec::new();
    for (r, result) in records.iter().zip(results) {
        match result {
            Ok(fused) => {
                let line = json!({
                    "key": r.key(),
                    "english_caption": r.english_caption,
                    "text": fused.conversation.to_canonical_text(),
                    "conversation": fused.conversation,
                    "probe": wordcount_probe(&fused.conversation, &r.english_caption),
                    "warnings": fused.warnings,
                    "provenance": fused.provenance,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            Err(e) if e.is_config() => return Err(CliError::Config(e.to_string())),
            Err(e) => failed.push((r.key(), e.to_string())),
        }
    }
    emit(args.out.as_ref(), &text, out)?;
    report_stats(&gateway, err);
    finish(&failed, records.len(), err)
}

fn translate(
    config: &PipelineConfig,
    args: StageArgs,
    env: Env<'_>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let (lang, records) = load_records(config, &args.corpus)?;
    let mut stages = CONTEXT_STAGES.to_vec();
    stages.push(translate_stage(lang));
    let (gateway, pipeline) = build_pipeline(config, &stages, env)?;
    let results = parallel_map(&records, config.jobs, |r| pipeline.upstream(r));
    let mut text = String::new();
    let mut failed = Vec::new();
    for (r, result) in records.iter().zip(results) {
        match result {
            Ok(up) => {
                let t = &up.translated;
                let line = json!({
                    "key": r.key(),
                    "language": t.language.code(),
                    "text": t.text,
                    "segments": t.segments,
                    "skipped": t.skipped,
                    "provenance": t.provenance,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            Err(e) if e.is_config() => return Err(CliError::Config(e.to_string())),
            Err(e) => failed.push((r.key(), e.to_string())),
        }
    }
    emit(args.out.as_ref(), &text, out)?;
    report_stats(&gateway, err);
    finish(&failed, records.len(), err)
}

const CAPTIONS_HEADER: &str = "image_id\tregion\tweight\tcaption\tvalid\tnotes";

fn caption(
    config: &PipelineConfig,
    args: CaptionArgs,
    env: Env<'_>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let weights = WeightConfig::new(args.weight).map_err(|e| CliError::Usage(e.to_string()))?;
    let (lang, records) = load_records(config, &args.corpus)?;
    let mut stages = CONTEXT_STAGES.to_vec();
    stages.extend([translate_stage(lang), "caption"]);
    let (gateway, pipeline) = build_pipeline(config, &stages, env)?;
    let results = parallel_map(&records, config.jobs, |r| {
        let up = pipeline.upstream(r)?;
        pipeline.caption(r, &up, weights)
    });
    let mut text = format!("{CAPTIONS_HEADER}\n");
    let mut failed = Vec::new();
    for (r, result) in records.iter().zip(results) {
        match result {
            Ok(c) => text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.image_id,
                r.region.slug(),
                weights.context_weight(),
                c.text,
                c.valid,
                c.validation_notes.join("; ")
            )),
            Err(e) if e.is_config() => return Err(CliError::Config(e.to_string())),
            Err(e) => failed.push((r.key(), e.to_string())),
        }
    }
    emit(args.out.as_ref(), &text, out)?;
    report_stats(&gateway, err);
    finish(&failed, records.len(), err)
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Operational(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn score(config: &PipelineConfig, args: ScoreArgs, env: Env<'_>, out: &mut dyn Write) -> Result<(), CliError> {
    let hyps = read_lines(&args.hyp)?;
    let refs = read_lines(&args.reference)?;
    if hyps.len() != refs.len() {
        return Err(CliError::Usage(format!(
            "{} hypothesis lines but {} reference lines",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(CliError::Usage("no lines to score".into()));
    }
    let normalizer = config.normalizer();
    let tok = |s: &String| normalizer.tokens(s);
    let metric_err = |e: capctl_core::metrics::MetricError| CliError::Operational(e.to_string());
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut embedder_id = "n/a".to_string();
    match args.metric {
        MetricKind::Bleu => {
            let h: Vec<Vec<String>> = hyps.iter().map(tok).collect();
            let r: Vec<Vec<String>> = refs.iter().map(tok).collect();
            let corpus = bleu_corpus(&h, &r, config.max_n, config.smoothing).map_err(metric_err)?;
            let pairs: Vec<_> = h.into_iter().zip(r).collect();
            let avg = bleu_sentence_avg(&pairs, config.max_n, config.smoothing).map_err(metric_err)?;
            rows.push(("corpus_bleu".into(), format!("{:.4}", corpus.score)));
            rows.push(("brevity_penalty".into(), format!("{:.4}", corpus.brevity_penalty)));
            rows.push(("avg_sentence_bleu".into(), format!("{avg:.4}")));
        }
        MetricKind::Ribes => {
            let mut sum = 0.0;
            for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
                let s = ribes(&tok(h), &tok(r)).map_err(|e| CliError::Operational(format!("line {}: {e}", i + 1)))?;
                sum += s.score;
            }
            rows.push(("avg_ribes".into(), format!("{:.4}", sum / hyps.len() as f64)));
        }
        MetricKind::Sem => {
            let src_path = args
                .src
                .as_ref()
                .ok_or_else(|| CliError::Usage("--metric sem needs --src".into()))?;
            let srcs = read_lines(src_path)?;
            if srcs.len() != hyps.len() {
                return Err(CliError::Usage(format!(
                    "{} source lines for {} hypotheses",
                    srcs.len(),
                    hyps.len()
                )));
            }
            let embedder: Arc<dyn Embedder> = config.embedder(env)?;
            embedder_id = embedder.id();
            let (mut sem, mut norm, mut undefined) = (0.0, 0.0, 0usize);
            for (i, ((h, r), s)) in hyps.iter().zip(&refs).zip(&srcs).enumerate() {
                let sc = similarity_scores(h, r, s, embedder.as_ref())
                    .map_err(|e| CliError::Operational(format!("line {}: {e}", i + 1)))?;
                sem += sc.sem_sim;
                match sc.norm_sem {
                    Some(v) => norm += v,
                    None => undefined += 1,
                }
            }
            let n = hyps.len();
            rows.push(("avg_sem_sim".into(), format!("{:.4}", sem / n as f64)));
            let defined = n - undefined;
            let avg_norm = if defined == 0 {
                "NA".to_string()
            } else {
                format!("{:.4}", norm / defined as f64)
            };
            rows.push(("avg_norm_sem".into(), avg_norm));
            rows.push(("undefined_norm_count".into(), undefined.to_string()));
        }
    }
    let metric = format!("{:?}", args.metric).to_lowercase();
    let mut text = format!(
        "# metric: {metric}\n# lines: {}\n# tokenizer: {}\n# smoothing: {}\n# max_n: {}\n# alpha: {RIBES_ALPHA}\n# beta: {RIBES_BETA}\n# embedder: {embedder_id}\nmetric\tvalue\n",
        hyps.len(),
        normalizer.describe(),
        config.smoothing,
        config.max_n,
    );
    for (k, v) in rows {
        text.push_str(&format!("{k}\t{v}\n"));
    }
    emit(args.out.as_ref(), &text, out)
}

fn sweep(
    config: &PipelineConfig,
    args: SweepArgs,
    env: Env<'_>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let lang = parse_lang(&args.corpus.lang)?;
    let records = if args.corpus.input.is_some() {
        load_records(config, &args.corpus)?.1
    } else {
        let mut all = Vec::new();
        for ((l, split), path) in &config.datasets {
            if *l == lang {
                all.extend(load(config, path, lang, *split)?);
            }
        }
        if all.is_empty() {
            return Err(CliError::Usage(format!(
                "no --in given and no dataset configured for {}",
                lang.code()
            )));
        }
        all
    };
    let weights = parse_weights(args.weights.as_deref().unwrap_or(&config.weights))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut sweep_config = SweepConfig::new(lang, args.seed);
    sweep_config.subset_size = args.subset;
    sweep_config.weights = weights.clone();
    sweep_config.smoothing = config.smoothing;
    sweep_config.max_n = config.max_n;
    sweep_config.include_ribes = args.ribes;
    sweep_config.similarity_text = config.similarity_text;
    sweep_config.jobs = config.jobs;
    sweep_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.subset > records.len() {
        return Err(CliError::Usage(format!(
            "--subset {} exceeds the {} available records",
            args.subset,
            records.len()
        )));
    }

    let stages = [CONTEXT_STAGES.as_slice(), &[translate_stage(lang), "caption"]].concat();
    let (gateway, pipeline) = build_pipeline(config, &stages, env)?;
    let embedder = config.embedder(env)?;
    let normalizer = config.normalizer();
    let ctx = SweepContext {
        pipeline: &pipeline,
        embedder: embedder.as_ref(),
        normalizer: &normalizer,
    };
    let result = run_sweep(&sweep_config, &records, &ctx).map_err(|e| match e {
        capctl_core::experiments::ExperimentError::Pipeline(p) if p.is_config() => CliError::Config(p.to_string()),
        capctl_core::experiments::ExperimentError::Pipeline(p) => CliError::Operational(p.to_string()),
        capctl_core::experiments::ExperimentError::MissingReference(k) => {
            CliError::Usage(format!("record {k} has no reference caption"))
        }
        other => CliError::Usage(other.to_string()),
    })?;

    let weights_desc = weights.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let mut meta = vec![
        ("language".to_string(), lang.code().to_string()),
        ("subset".to_string(), args.subset.to_string()),
        ("seed".to_string(), args.seed.to_string()),
        ("weights".to_string(), weights_desc),
        ("smoothing".to_string(), config.smoothing.to_string()),
        ("max_n".to_string(), config.max_n.to_string()),
        ("tokenizer".to_string(), normalizer.describe()),
        (
            "similarity_text".to_string(),
            format!("{:?}", config.similarity_text).to_lowercase(),
        ),
        ("embedder".to_string(), embedder.id()),
        ("backends".to_string(), config.assignments().describe()),
    ];
    if config.offline {
        meta.push(("mock_seed".to_string(), config.mock_seed.to_string()));
    }
    meta.push(("failures".to_string(), result.failures.len().to_string()));
    let format = match args.format {
        FormatArg::Tsv => ReportFormat::Tsv,
        FormatArg::Markdown => ReportFormat::Markdown,
    };
    emit(args.out.as_ref(), &emit_report(&result.rows, format, &meta), out)?;
    for (key, weight, msg) in &result.failures {
        let at = weight.map(|w| format!(" at weight {w}")).unwrap_or_default();
        let _ = writeln!(err, "excluded {key}{at}: {msg}");
    }
    report_stats(&gateway, err);
    if result.rows.iter().all(|r| r.n == 0) {
        return Err(CliError::Operational("every record failed".into()));
    }
    Ok(())
}

fn validate(args: ValidateArgs, config: &PipelineConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let lang = parse_lang(&args.lang)?;
    let english: HashMap<String, String> = match &args.corpus {
        Some(path) => load(config, path, lang, Split::Train)?
            .into_iter()
            .map(|r| (format!("{}\t{}", r.image_id, r.region.slug()), r.english_caption))
            .collect(),
        None => HashMap::new(),
    };
    let lines = read_lines(&args.input)?;
    let mut text = String::from("image_id\tregion\tweight\tvalid\tnotes\n");
    let (mut total, mut valid) = (0usize, 0usize);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() || line.starts_with("image_id\t") {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(CliError::Operational(format!(
                "{}:{}: expected at least 4 columns, found {}",
                args.input.display(),
                i + 1,
                cols.len()
            )));
        }
        let en = english
            .get(&format!("{}\t{}", cols[0], cols[1]))
            .map(String::as_str)
            .unwrap_or("");
        let v = validate_caption(cols[3], lang, en);
        total += 1;
        valid += v.valid as usize;
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            cols[0],
            cols[1],
            cols[2],
            v.valid,
            v.notes.join("; ")
        ));
    }
    text.push_str(&format!("# valid: {valid}/{total}\n"));
    emit(args.out.as_ref(), &text, out)
}
