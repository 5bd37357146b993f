//! Translating the fused English conversation into the target language.
//!
//! Indic languages go to a dedicated sentence-MT service, Hausa to an LLM.
//! Each question, answer and the description is one segment; segments are
//! translated concurrently and reassembled by index. The `Question`/`Answer`
//! scaffold labels are never sent to the translator; they are rendered
//! target-side from a fixed table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{CallRef, Conversation, SegmentKind, StageTarget};
use crate::gateway::{BackendRequest, Gateway, GatewayError, Message};
use crate::language::{Language, UnsupportedLanguage};
use crate::template::{Template, TemplateError};

pub const TRANSLATE_TAG: &str = "translate";
pub const TRANSLATE_TEMPLATE_V1: &str = include_str!("../templates/translate_v1.txt");
pub const MT_MAX_TOKENS: u32 = 512;
pub const LLM_TRANSLATE_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum TranslationError {
    #[error("translation configuration error: {0}")]
    Config(String),
    #[error("segment {index} failed to translate: {source}")]
    Segment {
        index: usize,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl From<UnsupportedLanguage> for TranslationError {
    fn from(e: UnsupportedLanguage) -> Self {
        TranslationError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorKind {
    DedicatedMt,
    Llm,
}

impl fmt::Display for TranslatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TranslatorKind::DedicatedMt => "dedicated_mt",
            TranslatorKind::Llm => "llm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorRoute {
    pub language: Language,
    pub translator: TranslatorKind,
    pub target: StageTarget,
}

impl TranslatorRoute {
    pub fn backend_id(&self) -> &str {
        &self.target.backend_id
    }
}

pub const DEFAULT_MT_BACKEND: &str = "indictrans2";
pub const DEFAULT_LLM_BACKEND: &str = "gpt-4o";

/// Default translator kind per language: IndicTrans2-style MT for the Indic
/// languages, an LLM for Hausa.
pub fn default_translator(language: Language) -> TranslatorKind {
    match language {
        Language::Hi | Language::Bn | Language::Ml => TranslatorKind::DedicatedMt,
        Language::Ha => TranslatorKind::Llm,
    }
}

/// Every supported language maps to exactly one route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingTable {
    routes: BTreeMap<Language, TranslatorRoute>,
}

impl RoutingTable {
    /// Routes each language to `mt` or `llm` according to [`default_translator`].
    pub fn new(mt: StageTarget, llm: StageTarget) -> Self {
        let routes = Language::ALL
            .into_iter()
            .map(|language| {
                let translator = default_translator(language);
                let target = match translator {
                    TranslatorKind::DedicatedMt => mt.clone(),
                    TranslatorKind::Llm => llm.clone(),
                };
                (
                    language,
                    TranslatorRoute {
                        language,
                        translator,
                        target,
                    },
                )
            })
            .collect();
        RoutingTable { routes }
    }

    pub fn with_route(mut self, route: TranslatorRoute) -> Self {
        self.routes.insert(route.language, route);
        self
    }

    pub fn route(&self, language: Language) -> &TranslatorRoute {
        self.routes.get(&language).expect("routing table covers every language")
    }

    pub fn route_tag(&self, tag: &str) -> Result<&TranslatorRoute, TranslationError> {
        Ok(self.route(Language::from_str(tag)?))
    }
}

impl Default for RoutingTable {
    fn default() -> Self {
        RoutingTable::new(
            StageTarget::new(DEFAULT_MT_BACKEND, "indictrans2-en-indic-1B"),
            StageTarget::new(DEFAULT_LLM_BACKEND, "gpt-4o-2024-08-06"),
        )
    }
}

/// Route under the default table.
pub fn route(language: Language) -> TranslatorRoute {
    RoutingTable::default().route(language).clone()
}

/// Scaffold labels rendered in the target language.
pub fn scaffold_labels(language: Language) -> (&'static str, &'static str) {
    match language {
        Language::Hi => ("प्रश्न", "उत्तर"),
        Language::Bn => ("প্রশ্ন", "উত্তর"),
        Language::Ml => ("ചോദ്യം", "ഉത്തരം"),
        Language::Ha => ("Tambaya", "Amsa"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedSegment {
    pub index: usize,
    pub kind: SegmentKind,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedContext {
    pub language: Language,
    pub text: String,
    pub segments: Vec<TranslatedSegment>,
    /// Indices of empty source segments that were not sent.
    pub skipped: Vec<usize>,
    pub provenance: Vec<CallRef>,
}

impl TranslatedContext {
    pub fn empty(language: Language) -> Self {
        TranslatedContext {
            language,
            text: String::new(),
            segments: Vec::new(),
            skipped: Vec::new(),
            provenance: Vec::new(),
        }
    }

    /// Prepends calls that produced the source conversation.
    pub fn with_upstream(mut self, upstream: &[CallRef]) -> Self {
        let mut provenance = upstream.to_vec();
        provenance.append(&mut self.provenance);
        self.provenance = provenance;
        self
    }
}

/// Renders translated segments with localized scaffold labels: question and
/// answer lines for each QA section, separated from the description by a
/// blank line.
pub fn render_target_text(language: Language, segments: &[TranslatedSegment]) -> String {
    let (q_label, a_label) = scaffold_labels(language);
    let mut short = Vec::new();
    let mut description = Vec::new();
    let mut complex = Vec::new();
    for seg in segments {
        let target = seg.target.trim();
        match seg.kind {
            SegmentKind::ShortQuestion(_) => short.push(format!("{q_label}: {target}")),
            SegmentKind::ShortAnswer(_) => short.push(format!("{a_label}: {target}")),
            SegmentKind::Description => description.push(target.to_string()),
            SegmentKind::ComplexQuestion(_) => complex.push(format!("{q_label}: {target}")),
            SegmentKind::ComplexAnswer(_) => complex.push(format!("{a_label}: {target}")),
        }
    }
    [short.join("\n"), description.join("\n"), complex.join("\n")]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub struct ContextTranslator {
    gateway: Arc<Gateway>,
    routes: RoutingTable,
    llm_template: Template,
}

impl ContextTranslator {
    pub fn new(gateway: Arc<Gateway>, routes: RoutingTable) -> Self {
        ContextTranslator {
            gateway,
            routes,
            llm_template: Template::new("translate_v1", TRANSLATE_TEMPLATE_V1),
        }
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn segment_request(&self, text: &str, language: Language) -> Result<BackendRequest, TranslationError> {
        let route = self.routes.route(language);
        let request = match route.translator {
            TranslatorKind::DedicatedMt => BackendRequest::new(TRANSLATE_TAG, vec![Message::user(text)], MT_MAX_TOKENS),
            TranslatorKind::Llm => {
                let prompt = self
                    .llm_template
                    .render(&[("target_language", language.name()), ("source_text", text)])?;
                BackendRequest::new(TRANSLATE_TAG, vec![Message::user(prompt)], LLM_TRANSLATE_MAX_TOKENS)
            }
        };
        Ok(route
            .target
            .apply(request)
            .with_param("source_lang", "en")
            .with_param("target_lang", language.code())
            .with_param("source_text", text))
    }

    pub fn translate(&self, conv: &Conversation, language: Language) -> Result<TranslatedContext, TranslationError> {
        if conv.is_empty() {
            return Ok(TranslatedContext::empty(language));
        }
        let segments = conv.segments();
        let mut skipped = Vec::new();
        let mut jobs = Vec::new();
        for (index, (kind, text)) in segments.iter().enumerate() {
            if text.trim().is_empty() {
                skipped.push(index);
            } else {
                jobs.push((index, *kind, text.to_string(), self.segment_request(text, language)?));
            }
        }

        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(_, _, _, req)| s.spawn(move || self.gateway.complete(req)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("translation worker panicked"))
                .collect()
        });

        let route = self.routes.route(language);
        let mut translated = Vec::with_capacity(jobs.len());
        let mut provenance = Vec::with_capacity(jobs.len());
        for ((index, kind, source, _), result) in jobs.into_iter().zip(results) {
            let resp = result.map_err(|source| TranslationError::Segment { index, source })?;
            provenance.push(CallRef {
                stage: TRANSLATE_TAG.into(),
                backend_id: route.backend_id().to_string(),
                cache_key: resp.cache_key,
            });
            translated.push(TranslatedSegment {
                index,
                kind,
                source,
                target: resp.text.trim().to_string(),
            });
        }
        Ok(TranslatedContext {
            language,
            text: render_target_text(language, &translated),
            segments: translated,
            skipped,
            provenance,
        })
    }
}
