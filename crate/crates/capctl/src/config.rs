//! Pipeline configuration: built-in defaults, overridden by an optional TOML
//! file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use capctl_core::corpus::{Origin, PunctuationSet, TextNormalizer};
use capctl_core::dialogue::StageTarget;
use capctl_core::experiments::SimilarityText;
use capctl_core::gateway::{
    AnthropicBackend, AuditLog, Backend, BackendLimits, DedicatedMtBackend, Gateway, OpenAiBackend, ResponseCache,
};
use capctl_core::imaging::ImageSource;
use capctl_core::metrics::{Embedder, HashEmbedder, HttpEmbedder, Smoothing, DEFAULT_EMBEDDING_MODEL, DEFAULT_MAX_N};
use capctl_core::pipeline::{with_mock, StageAssignments};
use capctl_core::{Language, Split};
use serde::Deserialize;

use crate::CliError;

pub const OPENAI_KEY_ENV: &str = "CAPCTL_OPENAI_KEY";
pub const ANTHROPIC_KEY_ENV: &str = "CAPCTL_ANTHROPIC_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Openai,
    Anthropic,
    DedicatedMt,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDef {
    pub id: String,
    pub kind: BackendKind,
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

/// Stage name → backend id.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageIds {
    pub context_a: String,
    pub context_b: String,
    pub fusion: String,
    pub mt: String,
    pub llm_translate: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDef {
    pub language: String,
    pub split: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderDef {
    pub kind: EmbedderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDef {
    /// "floor" or "none".
    pub smoothing: Option<String>,
    pub epsilon: Option<f64>,
    pub max_n: Option<usize>,
    pub punctuation_unicode: Option<bool>,
    pub punctuation_extra: Option<String>,
    pub similarity_text: Option<String>,
}

/// The TOML document.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub cache_dir: Option<PathBuf>,
    pub offline: Option<bool>,
    pub jobs: Option<usize>,
    pub mock_seed: Option<u64>,
    pub image_dir: Option<PathBuf>,
    pub image_extension: Option<String>,
    pub origin: Option<String>,
    pub weights: Option<String>,
    pub backends: Vec<BackendDef>,
    pub stages: Option<StageIds>,
    pub datasets: Vec<DatasetDef>,
    pub embedder: Option<EmbedderDef>,
    pub metrics: MetricsDef,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub offline: bool,
    pub jobs: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub mock_seed: Option<u64>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub cache_dir: PathBuf,
    pub offline: bool,
    pub jobs: usize,
    pub mock_seed: u64,
    pub image_dir: Option<PathBuf>,
    pub image_extension: String,
    pub origin: Origin,
    pub weights: String,
    pub backends: BTreeMap<String, BackendDef>,
    pub stages: StageIds,
    pub datasets: BTreeMap<(Language, Split), PathBuf>,
    pub embedder: EmbedderDef,
    pub smoothing: Smoothing,
    pub max_n: usize,
    pub punctuation: PunctuationSet,
    pub similarity_text: SimilarityText,
}

pub fn default_backends() -> Vec<BackendDef> {
    let def = |id: &str, kind, model: &str, endpoint: Option<&str>, env: Option<&str>| BackendDef {
        id: id.into(),
        kind,
        model_id: model.into(),
        endpoint: endpoint.map(String::from),
        credential_env: env.map(String::from),
        max_in_flight: None,
        requests_per_minute: None,
    };
    vec![
        def(
            "gpt-4o",
            BackendKind::Openai,
            "gpt-4o-2024-08-06",
            None,
            Some(OPENAI_KEY_ENV),
        ),
        def(
            "claude",
            BackendKind::Anthropic,
            "claude-3-5-sonnet-20240620",
            None,
            Some(ANTHROPIC_KEY_ENV),
        ),
        def(
            "indictrans2",
            BackendKind::DedicatedMt,
            "indictrans2-en-indic-1B",
            Some("http://localhost:8000/translate"),
            None,
        ),
    ]
}

fn default_stage_ids() -> StageIds {
    let d = StageAssignments::default();
    StageIds {
        context_a: d.context_a.backend_id,
        context_b: d.context_b.backend_id,
        fusion: d.fusion.backend_id,
        mt: d.mt.backend_id,
        llm_translate: d.llm_translate.backend_id,
        caption: d.caption.backend_id,
    }
}

impl PipelineConfig {
    pub fn resolve(file: FileConfig, flags: &Overrides) -> Result<Self, CliError> {
        let mut backends: BTreeMap<String, BackendDef> =
            default_backends().into_iter().map(|b| (b.id.clone(), b)).collect();
        for b in file.backends {
            backends.insert(b.id.clone(), b);
        }
        let stages = file.stages.unwrap_or_else(default_stage_ids);
        for (stage, id) in stage_pairs(&stages) {
            if !backends.contains_key(id) {
                return Err(CliError::Config(format!(
                    "stage `{stage}` uses undefined backend `{id}`"
                )));
            }
        }
        let mut datasets = BTreeMap::new();
        for d in file.datasets {
            let lang: Language = d
                .language
                .parse()
                .map_err(|e| CliError::Config(format!("dataset: {e}")))?;
            let split: Split = d.split.parse().map_err(|e| CliError::Config(format!("dataset: {e}")))?;
            datasets.insert((lang, split), d.path);
        }
        let origin = match file.origin {
            Some(o) => o.parse().map_err(|e| CliError::Config(format!("origin: {e}")))?,
            None => Origin::default(),
        };
        let m = file.metrics;
        let smoothing = match m.smoothing.as_deref() {
            None | Some("floor") => Smoothing::Floor {
                epsilon: m.epsilon.unwrap_or(0.1),
            },
            Some("none") => Smoothing::None,
            Some(other) => return Err(CliError::Config(format!("unknown smoothing `{other}`"))),
        };
        let mut punctuation = PunctuationSet::default();
        if let Some(u) = m.punctuation_unicode {
            punctuation.unicode = u;
        }
        if let Some(extra) = &m.punctuation_extra {
            punctuation.extra.extend(extra.chars());
        }
        let similarity_text = match m.similarity_text.as_deref() {
            None => SimilarityText::Raw,
            Some(s) => s.parse().map_err(|e| CliError::Config(format!("{e}")))?,
        };
        let jobs = flags.jobs.or(file.jobs).unwrap_or(4);
        if jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        Ok(PipelineConfig {
            cache_dir: flags
                .cache_dir
                .clone()
                .or(file.cache_dir)
                .unwrap_or_else(|| PathBuf::from("cache")),
            offline: flags.offline || file.offline.unwrap_or(false),
            jobs,
            mock_seed: flags.mock_seed.or(file.mock_seed).unwrap_or(0),
            image_dir: file.image_dir,
            image_extension: file.image_extension.unwrap_or_else(|| "jpg".into()),
            origin,
            weights: file.weights.unwrap_or_else(|| "0:100:10".into()),
            backends,
            stages,
            datasets,
            embedder: file.embedder.unwrap_or(EmbedderDef {
                kind: EmbedderKind::Http,
                endpoint: None,
                model: None,
                credential_env: None,
                dim: None,
                seed: None,
            }),
            smoothing,
            max_n: m.max_n.unwrap_or(DEFAULT_MAX_N),
            punctuation,
            similarity_text,
        })
    }

    pub fn normalizer(&self) -> TextNormalizer {
        TextNormalizer::new(self.punctuation.clone())
    }

    /// Stage targets; offline mode puts every stage on the mock.
    pub fn assignments(&self) -> StageAssignments {
        if self.offline {
            return StageAssignments::offline();
        }
        let t = |id: &String| StageTarget::new(id.as_str(), self.backends[id].model_id.as_str());
        StageAssignments {
            context_a: t(&self.stages.context_a),
            context_b: t(&self.stages.context_b),
            fusion: t(&self.stages.fusion),
            mt: t(&self.stages.mt),
            llm_translate: t(&self.stages.llm_translate),
            caption: t(&self.stages.caption),
        }
    }

    pub fn image_source(&self) -> ImageSource {
        match (&self.image_dir, self.offline) {
            (Some(dir), _) => ImageSource::Directory {
                dir: dir.clone(),
                extension: self.image_extension.clone(),
                audit_dir: None,
            },
            (None, true) => ImageSource::Synthetic,
            (None, false) => {
                tracing::warn!("no image_dir configured; prompts are sent without region crops");
                ImageSource::None
            }
        }
    }

    fn limits(&self, def: Option<&BackendDef>) -> BackendLimits {
        BackendLimits {
            max_in_flight: def.and_then(|d| d.max_in_flight).unwrap_or(self.jobs),
            requests_per_minute: def.and_then(|d| d.requests_per_minute),
        }
    }

    /// Builds the gateway with the backends serving `stages` (stage names as
    /// in [`StageIds`]). Live backends need their credentials present.
    pub fn gateway(&self, stages: &[&str], env: &dyn Fn(&str) -> Option<String>) -> Result<Gateway, CliError> {
        // Credentials are checked before anything touches the disk.
        let mut backends = Vec::new();
        if !self.offline {
            let mut ids: Vec<&String> = stage_pairs(&self.stages)
                .into_iter()
                .filter(|(s, _)| stages.contains(s))
                .map(|(_, id)| id)
                .collect();
            ids.sort();
            ids.dedup();
            for id in ids {
                let def = &self.backends[id];
                backends.push((
                    id.clone(),
                    make_backend(def, self.mock_seed, env)?,
                    self.limits(Some(def)),
                ));
            }
        }
        let cache = ResponseCache::on_disk(&self.cache_dir)
            .map_err(|e| CliError::Config(format!("cache dir {}: {e}", self.cache_dir.display())))?;
        let audit_path = self.cache_dir.join("audit.log");
        let audit = AuditLog::open(&audit_path)
            .map_err(|e| CliError::Config(format!("audit log {}: {e}", audit_path.display())))?;
        let mut builder = Gateway::builder(cache).audit(audit);
        if self.offline {
            return Ok(with_mock(builder, self.mock_seed, self.limits(None)).build());
        }
        for (id, backend, limits) in backends {
            builder = builder.backend(id, backend, limits);
        }
        Ok(builder.build())
    }

    pub fn embedder(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<Arc<dyn Embedder>, CliError> {
        let e = &self.embedder;
        if self.offline || e.kind == EmbedderKind::Hash {
            return Ok(Arc::new(HashEmbedder::new(e.dim.unwrap_or(256), e.seed.unwrap_or(0))));
        }
        let key = match &e.credential_env {
            Some(var) => Some(credential(var, env)?),
            None => None,
        };
        Ok(Arc::new(HttpEmbedder::new(
            e.endpoint
                .clone()
                .unwrap_or_else(|| "http://localhost:8080/v1/embeddings".into()),
            e.model.clone().unwrap_or_else(|| DEFAULT_EMBEDDING_MODEL.into()),
            key,
        )))
    }
}

fn stage_pairs(s: &StageIds) -> [(&'static str, &String); 6] {
    [
        ("context_a", &s.context_a),
        ("context_b", &s.context_b),
        ("fusion", &s.fusion),
        ("mt", &s.mt),
        ("llm_translate", &s.llm_translate),
        ("caption", &s.caption),
    ]
}

fn credential(var: &str, env: &dyn Fn(&str) -> Option<String>) -> Result<String, CliError> {
    env(var)
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| CliError::Config(format!("missing credential: environment variable {var} is not set")))
}

fn make_backend(
    def: &BackendDef,
    mock_seed: u64,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<Arc<dyn Backend>, CliError> {
    let key = |fallback: &str| credential(def.credential_env.as_deref().unwrap_or(fallback), env);
    Ok(match def.kind {
        BackendKind::Openai => Arc::new(OpenAiBackend::new(
            def.endpoint.as_deref().unwrap_or(OpenAiBackend::DEFAULT_ENDPOINT),
            key(OPENAI_KEY_ENV)?,
        )),
        BackendKind::Anthropic => Arc::new(AnthropicBackend::new(
            def.endpoint.as_deref().unwrap_or(AnthropicBackend::DEFAULT_ENDPOINT),
            key(ANTHROPIC_KEY_ENV)?,
        )),
        BackendKind::DedicatedMt => {
            let endpoint = def
                .endpoint
                .as_deref()
                .ok_or_else(|| CliError::Config(format!("backend `{}` needs an endpoint", def.id)))?;
            Arc::new(DedicatedMtBackend::new(endpoint))
        }
        BackendKind::Mock => Arc::new(capctl_core::gateway::MockBackend::new(mock_seed)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let file: FileConfig = toml::from_str(
            r#"
            jobs = 8
            cache_dir = "from-file"
            [metrics]
            smoothing = "none"
            [[backends]]
            id = "local"
            kind = "mock"
            model_id = "m"
            [stages]
            context_a = "local"
            context_b = "local"
            fusion = "local"
            mt = "local"
            llm_translate = "local"
            caption = "local"
            "#,
        )
        .unwrap();
        let flags = Overrides {
            jobs: Some(2),
            ..Default::default()
        };
        let c = PipelineConfig::resolve(file, &flags).unwrap();
        assert_eq!(c.jobs, 2);
        assert_eq!(c.cache_dir, PathBuf::from("from-file"));
        assert_eq!(c.smoothing, Smoothing::None);
        assert_eq!(c.assignments().caption, StageTarget::new("local", "m"));
    }

    #[test]
    fn undefined_backend_is_a_config_error() {
        let file: FileConfig = toml::from_str(
            r#"
            [stages]
            context_a = "nope"
            context_b = "claude"
            fusion = "gpt-4o"
            mt = "indictrans2"
            llm_translate = "gpt-4o"
            caption = "gpt-4o"
            "#,
        )
        .unwrap();
        assert!(matches!(
            PipelineConfig::resolve(file, &Overrides::default()),
            Err(CliError::Config(_))
        ));
        assert!(toml::from_str::<FileConfig>("unknown_key = 1").is_err());
    }

    #[test]
    fn missing_credential_names_the_variable() {
        let dir = tempfile::tempdir().unwrap();
        let flags = Overrides {
            cache_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let c = PipelineConfig::resolve(FileConfig::default(), &flags).unwrap();
        let err = c.gateway(&["context_b"], &no_env).err().unwrap();
        assert!(err.to_string().contains(ANTHROPIC_KEY_ENV), "{err}");
        // The MT service needs no key.
        assert!(c.gateway(&["mt"], &no_env).is_ok());
    }

    #[test]
    fn offline_forces_mock_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let flags = Overrides {
            offline: true,
            cache_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let c = PipelineConfig::resolve(FileConfig::default(), &flags).unwrap();
        assert!(c.assignments().all().iter().all(|(_, t)| t.backend_id == "mock"));
        let gw = c.gateway(&["context_a", "caption"], &no_env).unwrap();
        assert_eq!(gw.backend_ids(), vec!["mock"]);
        assert!(c.embedder(&no_env).unwrap().id().starts_with("hash"));
    }
}
