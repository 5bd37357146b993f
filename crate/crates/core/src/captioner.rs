//! Weighted caption generation: the English caption and the translated
//! context are combined under an explicit percentage split, then the model's
//! answer is cleaned up and linted.

use std::fmt;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RegionRecord;
use crate::dialogue::StageTarget;
use crate::gateway::{BackendRequest, Gateway, GatewayError, Message};
use crate::language::{Language, Script};
use crate::template::{Template, TemplateError};
use crate::translation::TranslatedContext;

pub const CAPTION_MAX_TOKENS: u32 = 300;
pub const CAPTION_TAG: &str = "caption";
pub const CAPTION_PROMPT_TEMPLATE: &str = include_str!("../templates/caption_prompt.txt");

/// Minimum share of letters that must belong to the language's script.
pub const SCRIPT_SHARE_THRESHOLD: f64 = 0.8;
pub const LENGTH_RATIO_MIN: f64 = 1.0 / 3.0;
pub const LENGTH_RATIO_MAX: f64 = 3.0;

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("invalid weights: context {context} + english {english} must equal 100")]
    InvalidWeights { context: u32, english: u32 },
    #[error("english caption is empty")]
    EmptyCaption,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct WeightConfig {
    context: u8,
}

#[derive(Serialize, Deserialize)]
struct RawWeights {
    context_weight: u32,
    english_weight: u32,
}

impl TryFrom<RawWeights> for WeightConfig {
    type Error = CaptionError;
    fn try_from(raw: RawWeights) -> Result<Self, Self::Error> {
        WeightConfig::from_parts(raw.context_weight, raw.english_weight)
    }
}

impl From<WeightConfig> for RawWeights {
    fn from(w: WeightConfig) -> Self {
        RawWeights {
            context_weight: w.context_weight(),
            english_weight: w.english_weight(),
        }
    }
}

impl WeightConfig {
    /// `context` percent from the translated context, the rest from English.
    pub fn new(context: u32) -> Result<Self, CaptionError> {
        WeightConfig::from_parts(context, 100u32.saturating_sub(context))
    }

    pub fn from_parts(context: u32, english: u32) -> Result<Self, CaptionError> {
        if context > 100 || english > 100 || context + english != 100 {
            return Err(CaptionError::InvalidWeights { context, english });
        }
        Ok(WeightConfig { context: context as u8 })
    }

    pub fn context_weight(self) -> u32 {
        self.context as u32
    }

    pub fn english_weight(self) -> u32 {
        100 - self.context as u32
    }
}

impl fmt::Display for WeightConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "context {}% / english {}%",
            self.context_weight(),
            self.english_weight()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCaption {
    pub text: String,
    pub language: Language,
    pub weights: WeightConfig,
    /// Cache keys of every call that contributed, upstream first.
    pub provenance: Vec<String>,
    pub valid: bool,
    pub validation_notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CaptionPrompt {
    template: Template,
}

impl Default for CaptionPrompt {
    fn default() -> Self {
        CaptionPrompt {
            template: Template::new("caption_prompt", CAPTION_PROMPT_TEMPLATE),
        }
    }
}

impl CaptionPrompt {
    pub fn new(template: Template) -> Self {
        CaptionPrompt { template }
    }

    pub fn render(
        &self,
        english_caption: &str,
        translated_context: &str,
        weights: WeightConfig,
        language: Language,
    ) -> Result<String, CaptionError> {
        if english_caption.trim().is_empty() {
            return Err(CaptionError::EmptyCaption);
        }
        assert_eq!(weights.context_weight() + weights.english_weight(), 100);
        let english_weight = weights.english_weight().to_string();
        let context_weight = weights.context_weight().to_string();
        Ok(self.template.render(&[
            ("target_language", language.name()),
            ("english_weight", &english_weight),
            ("english_caption", english_caption),
            ("context_weight", &context_weight),
            ("translated_conversation", translated_context),
        ])?)
    }

    pub fn build_request(
        &self,
        english_caption: &str,
        translated_context: &str,
        weights: WeightConfig,
        language: Language,
    ) -> Result<BackendRequest, CaptionError> {
        let prompt = self.render(english_caption, translated_context, weights, language)?;
        Ok(BackendRequest::new(
            CAPTION_TAG,
            vec![Message::user(prompt)],
            CAPTION_MAX_TOKENS,
        ))
    }
}

pub fn build_caption_prompt(
    english_caption: &str,
    translated_context: &str,
    weights: WeightConfig,
    language: Language,
) -> Result<BackendRequest, CaptionError> {
    CaptionPrompt::default().build_request(english_caption, translated_context, weights, language)
}

static CODE_FENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)^```[^\n]*\n(.*?)\n?```$").unwrap());
static LEAD_LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^(?:[a-z]+\s+)?caption\s*:\s*").unwrap());
static EMPHASIS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\*\*|__|^#+\s*|^>\s*").unwrap());

const QUOTE_PAIRS: [(char, char); 8] = [
    ('"', '"'),
    ('\'', '\''),
    ('“', '”'),
    ('‘', '’'),
    ('«', '»'),
    ('„', '“'),
    ('`', '`'),
    ('*', '*'),
];

fn strip_quotes(mut s: &str) -> &str {
    loop {
        let t = s.trim();
        let stripped = QUOTE_PAIRS.iter().find_map(|&(open, close)| {
            t.strip_prefix(open)
                .and_then(|rest| rest.strip_suffix(close))
                .filter(|_| t.chars().count() >= 2)
        });
        match stripped {
            Some(inner) => s = inner,
            None => return t,
        }
    }
}

/// Removes code fences, a leading "caption:" label, markdown emphasis and
/// surrounding quotes. Line structure is preserved so validation can see it.
pub fn strip_decoration(raw: &str) -> String {
    let mut text = raw.trim().to_string();
    if let Some(c) = CODE_FENCE.captures(&text) {
        text = c[1].trim().to_string();
    }
    let lines: Vec<String> = text
        .lines()
        .map(|line| {
            let line = EMPHASIS.replace_all(line.trim(), "");
            let line = LEAD_LABEL.replace(&line, "");
            strip_quotes(&line).to_string()
        })
        .filter(|l| !l.is_empty())
        .collect();
    lines.join("\n")
}

/// Joins lines and collapses whitespace.
pub fn to_single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub valid: bool,
    pub notes: Vec<String>,
}

/// Share of alphabetic characters written in `script`; `None` without letters.
pub fn script_share(text: &str, script: Script) -> Option<f64> {
    let mut letters = 0usize;
    let mut matching = 0usize;
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if Script::of(c) == Some(script) {
            matching += 1;
        }
    }
    (letters > 0).then(|| matching as f64 / letters as f64)
}

pub fn validate_caption(text: &str, language: Language, english_caption: &str) -> Validation {
    let mut notes = Vec::new();
    let trimmed = text.trim();
    let expected = language.script();
    match script_share(trimmed, expected) {
        None => notes.push("script mismatch: no letters in output".to_string()),
        Some(share) if share < SCRIPT_SHARE_THRESHOLD => notes.push(format!(
            "script mismatch: {:.0}% of letters are {}",
            share * 100.0,
            expected.name()
        )),
        Some(_) => {}
    }
    if trimmed.contains('\n') {
        notes.push("multi-line output".to_string());
    }
    let out_tokens = trimmed.split_whitespace().count();
    let en_tokens = english_caption.split_whitespace().count();
    if en_tokens > 0 {
        let ratio = out_tokens as f64 / en_tokens as f64;
        if !(LENGTH_RATIO_MIN..=LENGTH_RATIO_MAX).contains(&ratio) {
            notes.push(format!(
                "length ratio {ratio:.2} ({out_tokens}/{en_tokens} tokens) outside [1/3, 3]"
            ));
        }
    }
    Validation {
        valid: notes.is_empty(),
        notes,
    }
}

pub struct CaptionGenerator {
    gateway: Arc<Gateway>,
    target: StageTarget,
    prompt: CaptionPrompt,
}

impl CaptionGenerator {
    pub fn new(gateway: Arc<Gateway>, target: StageTarget) -> Self {
        CaptionGenerator {
            gateway,
            target,
            prompt: CaptionPrompt::default(),
        }
    }

    pub fn with_prompt(mut self, prompt: CaptionPrompt) -> Self {
        self.prompt = prompt;
        self
    }

    pub fn request(
        &self,
        record: &RegionRecord,
        context: &TranslatedContext,
        weights: WeightConfig,
    ) -> Result<BackendRequest, CaptionError> {
        let req = self
            .prompt
            .build_request(&record.english_caption, &context.text, weights, context.language)?;
        Ok(self.target.apply(req))
    }

    pub fn generate(
        &self,
        record: &RegionRecord,
        context: &TranslatedContext,
        weights: WeightConfig,
    ) -> Result<GeneratedCaption, CaptionError> {
        let req = self.request(record, context, weights)?;
        let resp = self.gateway.complete(&req)?;
        let cleaned = strip_decoration(&resp.text);
        let validation = validate_caption(&cleaned, context.language, &record.english_caption);
        if !validation.valid {
            tracing::warn!(key = %record.key(), notes = ?validation.notes, "caption failed validation");
        }
        let mut provenance: Vec<String> = context.provenance.iter().map(|c| c.cache_key.clone()).collect();
        provenance.push(resp.cache_key);
        Ok(GeneratedCaption {
            text: to_single_line(&cleaned),
            language: context.language,
            weights,
            provenance,
            valid: validation.valid,
            validation_notes: validation.notes,
        })
    }
}
