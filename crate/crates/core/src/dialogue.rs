//! Synthetic conversations about a region: the conversation-generation
//! prompt, a tolerant parser for model output, two-source fusion, and the
//! caption word-count probe.

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{word_count, RegionRecord};
use crate::gateway::{BackendRequest, Gateway, GatewayError, Message};
use crate::template::{Template, TemplateError};

/// Token cap on conversation-generation and fusion replies.
pub const CONTEXT_MAX_TOKENS: u32 = 1024;
pub const CONTEXT_TAG: &str = "context";
pub const FUSION_TAG: &str = "fusion";
pub const FUSION_PRODUCER: &str = "fusion";

pub const CONTEXT_PROMPT_TEMPLATE: &str = include_str!("../templates/context_prompt.txt");
pub const FUSION_TEMPLATE_V1: &str = include_str!("../templates/fusion_v1.txt");

/// Substituted for `{image_link}`: the crop travels as an attachment.
pub const IMAGE_LINK_LABEL: &str = "<image>";
pub const DEFAULT_EXAMPLE_IMAGE_LINK: &str = "not provided";
/// Rendered in place of a conversation that has no text.
pub const EMPTY_CONVERSATION_MARKER: &str = "(no conversation was produced)";

const SECTION_TITLES: [&str; 3] = ["conversation", "detailed description", "complex reasoning"];

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("English caption is empty")]
    EmptyCaption,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

impl QaPair {
    pub fn new(question: impl Into<String>, answer: impl Into<String>) -> Self {
        QaPair {
            question: question.into(),
            answer: answer.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Conversation {
    pub short_qa: Vec<QaPair>,
    pub detailed_description: String,
    pub complex_qa: Vec<QaPair>,
    /// Model output exactly as received.
    pub raw_text: String,
    pub producer: String,
}

/// Which part of a conversation a translatable segment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    ShortQuestion(usize),
    ShortAnswer(usize),
    Description,
    ComplexQuestion(usize),
    ComplexAnswer(usize),
}

impl Conversation {
    pub fn empty(producer: impl Into<String>) -> Self {
        Conversation {
            producer: producer.into(),
            ..Default::default()
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.short_qa.is_empty() && !self.detailed_description.trim().is_empty() && !self.complex_qa.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.short_qa.is_empty() && self.detailed_description.trim().is_empty() && self.complex_qa.is_empty()
    }

    pub fn all_qa(&self) -> impl Iterator<Item = &QaPair> {
        self.short_qa.iter().chain(self.complex_qa.iter())
    }

    pub fn all_qa_mut(&mut self) -> impl Iterator<Item = &mut QaPair> {
        self.short_qa.iter_mut().chain(self.complex_qa.iter_mut())
    }

    /// The layout the conversation prompt asks for.
    pub fn to_canonical_text(&self) -> String {
        let mut blocks: Vec<String> = Vec::new();
        blocks.push(format!("Response type 1: {}", SECTION_TITLES[0]));
        for qa in &self.short_qa {
            blocks.push(format!("Question: {}", qa.question));
            blocks.push(format!("Answer: {}", qa.answer));
        }
        blocks.push(format!("Response type 2: {}", SECTION_TITLES[1]));
        if !self.detailed_description.is_empty() {
            blocks.push(self.detailed_description.clone());
        }
        blocks.push(format!("Response type 3: {}", SECTION_TITLES[2]));
        for qa in &self.complex_qa {
            blocks.push(format!("Question: {}", qa.question));
            blocks.push(format!("Answer: {}", qa.answer));
        }
        blocks.join("\n\n")
    }

    /// Translatable units in reading order: each question, each answer, and
    /// the description.
    pub fn segments(&self) -> Vec<(SegmentKind, &str)> {
        let mut out = Vec::new();
        for (i, qa) in self.short_qa.iter().enumerate() {
            out.push((SegmentKind::ShortQuestion(i), qa.question.as_str()));
            out.push((SegmentKind::ShortAnswer(i), qa.answer.as_str()));
        }
        out.push((SegmentKind::Description, self.detailed_description.as_str()));
        for (i, qa) in self.complex_qa.iter().enumerate() {
            out.push((SegmentKind::ComplexQuestion(i), qa.question.as_str()));
            out.push((SegmentKind::ComplexAnswer(i), qa.answer.as_str()));
        }
        out
    }
}

/// The conversation-generation prompt.
#[derive(Debug, Clone)]
pub struct ContextPrompt {
    template: Template,
    example_image_link: String,
}

impl Default for ContextPrompt {
    fn default() -> Self {
        ContextPrompt {
            template: Template::new("context_prompt", CONTEXT_PROMPT_TEMPLATE),
            example_image_link: DEFAULT_EXAMPLE_IMAGE_LINK.to_string(),
        }
    }
}

impl ContextPrompt {
    pub fn with_example_image_link(mut self, link: impl Into<String>) -> Self {
        self.example_image_link = link.into();
        self
    }

    pub fn render(&self, english_caption: &str) -> Result<String, DialogueError> {
        if english_caption.trim().is_empty() {
            return Err(DialogueError::EmptyCaption);
        }
        Ok(self.template.render(&[
            ("example_image_link", &self.example_image_link),
            ("english_caption", english_caption),
            ("image_link", IMAGE_LINK_LABEL),
        ])?)
    }

    /// Backend and model are left for the caller to fill in.
    pub fn build_request(
        &self,
        english_caption: &str,
        image_b64: Option<&str>,
    ) -> Result<BackendRequest, DialogueError> {
        let text = self.render(english_caption)?;
        Ok(
            BackendRequest::new(CONTEXT_TAG, vec![Message::user(text)], CONTEXT_MAX_TOKENS)
                .with_image(image_b64.map(str::to_string)),
        )
    }
}

pub fn build_context_prompt(english_caption: &str, image_b64: &str) -> Result<BackendRequest, DialogueError> {
    ContextPrompt::default().build_request(english_caption, Some(image_b64).filter(|s| !s.is_empty()))
}

/// Recovers the English caption from a rendered conversation prompt.
pub fn caption_from_context_prompt(prompt: &str) -> Option<&str> {
    let suffix = format!(", {IMAGE_LINK_LABEL}. Do not hallucinate!");
    prompt.lines().last()?.strip_suffix(suffix.as_str())
}

static HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[\s>#*_\-]*response[\s_]*type[\s_]*([123])\b.*$").unwrap());
static QA_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^[\s>#*_\-]*(?:\d+[.)]\s*)?(?:\*\*|__)?\s*(question|answer|q|a)\s*\d*\s*(?:\*\*|__)?\s*[:：]\s*(?:\*\*|__)?\s*(.*)$",
    )
    .unwrap()
});
static STRICT_QA_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^(Question|Answer):\s*(.*)$").unwrap());

/// Parser settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Accept only bare `Question:` / `Answer:` prefixes.
    pub strict: bool,
}

pub fn parse_conversation(text: &str, producer: &str) -> Conversation {
    parse_conversation_with(text, producer, ParseOptions::default())
}

/// Never fails: output the parser cannot place leaves sections empty, and
/// the verbatim text stays in `raw_text`.
pub fn parse_conversation_with(text: &str, producer: &str, options: ParseOptions) -> Conversation {
    let mut conv = Conversation {
        raw_text: text.to_string(),
        producer: producer.to_string(),
        ..Default::default()
    };
    let headers: Vec<(usize, usize, usize)> = HEADER
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).unwrap();
            (c[1].parse::<usize>().unwrap(), m.start(), m.end())
        })
        .collect();
    let mut descriptions = Vec::new();
    for (i, &(section, _, body_start)) in headers.iter().enumerate() {
        let body_end = headers.get(i + 1).map_or(text.len(), |h| h.1);
        let body = &text[body_start..body_end];
        match section {
            1 => conv.short_qa.extend(extract_qa(body, options)),
            2 => {
                let d = clean_description(body);
                if !d.is_empty() {
                    descriptions.push(d);
                }
            }
            _ => conv.complex_qa.extend(extract_qa(body, options)),
        }
    }
    conv.detailed_description = descriptions.join("\n\n");
    conv
}

fn strip_emphasis(s: &str) -> &str {
    s.trim().trim_matches(|c| c == '*' || c == '_').trim()
}

fn extract_qa(body: &str, options: ParseOptions) -> Vec<QaPair> {
    enum Field {
        None,
        Question,
        Answer,
    }
    let mut pairs = Vec::new();
    let mut question: Vec<String> = Vec::new();
    let mut answer: Vec<String> = Vec::new();
    let mut field = Field::None;
    let flush = |question: &mut Vec<String>, answer: &mut Vec<String>, pairs: &mut Vec<QaPair>| {
        let q = question.join("\n");
        let a = answer.join("\n");
        if !q.trim().is_empty() && !a.trim().is_empty() {
            pairs.push(QaPair::new(q.trim(), a.trim()));
        }
        question.clear();
        answer.clear();
    };
    let pattern: &Regex = if options.strict { &STRICT_QA_LINE } else { &QA_LINE };
    for line in body.lines() {
        if let Some(c) = pattern.captures(line) {
            let label = c[1].to_ascii_lowercase();
            let value = strip_emphasis(&c[2]).to_string();
            if label.starts_with('q') {
                flush(&mut question, &mut answer, &mut pairs);
                field = Field::Question;
                if !value.is_empty() {
                    question.push(value);
                }
            } else {
                // A second answer label continues the same answer.
                field = Field::Answer;
                if !value.is_empty() {
                    answer.push(value);
                }
            }
            continue;
        }
        let line = strip_emphasis(line);
        if line.is_empty() {
            continue;
        }
        match field {
            Field::Question => question.push(line.to_string()),
            Field::Answer => answer.push(line.to_string()),
            Field::None => {}
        }
    }
    flush(&mut question, &mut answer, &mut pairs);
    pairs
}

fn clean_description(body: &str) -> String {
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in body.lines() {
        let line = strip_emphasis(line);
        if line.is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join(" "));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join(" "));
    }
    paragraphs.join("\n\n")
}

/// Versioned fusion prompt.
#[derive(Debug, Clone)]
pub struct FusionPrompt {
    template: Template,
}

impl Default for FusionPrompt {
    fn default() -> Self {
        FusionPrompt {
            template: Template::new("fusion_v1", FUSION_TEMPLATE_V1),
        }
    }
}

impl FusionPrompt {
    pub fn new(template: Template) -> Self {
        FusionPrompt { template }
    }

    pub fn render(&self, conv_a: &Conversation, conv_b: &Conversation) -> Result<String, DialogueError> {
        let body = |c: &Conversation| {
            if c.raw_text.trim().is_empty() {
                EMPTY_CONVERSATION_MARKER.to_string()
            } else {
                c.raw_text.clone()
            }
        };
        let (a, b) = (body(conv_a), body(conv_b));
        Ok(self.template.render(&[
            ("producer_a", &conv_a.producer),
            ("conversation_a", &a),
            ("producer_b", &conv_b.producer),
            ("conversation_b", &b),
        ])?)
    }

    pub fn build_request(&self, conv_a: &Conversation, conv_b: &Conversation) -> Result<BackendRequest, DialogueError> {
        Ok(BackendRequest::new(
            FUSION_TAG,
            vec![Message::user(self.render(conv_a, conv_b)?)],
            CONTEXT_MAX_TOKENS,
        ))
    }
}

pub fn build_fusion_prompt(conv_a: &Conversation, conv_b: &Conversation) -> Result<BackendRequest, DialogueError> {
    FusionPrompt::default().build_request(conv_a, conv_b)
}

/// Pulls the two embedded conversations back out of a rendered fusion prompt.
pub fn conversations_from_fusion_prompt(prompt: &str) -> Option<(String, String)> {
    let block = |label: &str| -> Option<String> {
        let start_marker = format!("=== Conversation {label} (");
        let end_marker = format!("\n=== End of conversation {label} ===");
        let start = prompt.find(&start_marker)?;
        let body_start = start + prompt[start..].find(") ===\n")? + ") ===\n".len();
        let body_end = body_start + prompt[body_start..].find(&end_marker)?;
        let body = &prompt[body_start..body_end];
        Some(if body == EMPTY_CONVERSATION_MARKER {
            String::new()
        } else {
            body.to_string()
        })
    };
    Some((block("A")?, block("B")?))
}

/// A backend/model pair a stage sends its requests to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTarget {
    pub backend_id: String,
    pub model_id: String,
    pub temperature: f64,
}

impl StageTarget {
    pub fn new(backend_id: impl Into<String>, model_id: impl Into<String>) -> Self {
        StageTarget {
            backend_id: backend_id.into(),
            model_id: model_id.into(),
            temperature: 0.0,
        }
    }

    pub fn apply(&self, request: BackendRequest) -> BackendRequest {
        request
            .with_target(&self.backend_id, &self.model_id)
            .with_temperature(self.temperature)
    }
}

/// One gateway call behind a pipeline artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRef {
    pub stage: String,
    pub backend_id: String,
    pub cache_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedContext {
    pub conversation: Conversation,
    pub sources: Vec<Conversation>,
    pub provenance: Vec<CallRef>,
    pub warnings: Vec<String>,
}

/// Two conversation backends plus a fusion backend.
pub struct ContextGenerator {
    gateway: Arc<Gateway>,
    sources: [StageTarget; 2],
    fusion: StageTarget,
    context_prompt: ContextPrompt,
    fusion_prompt: FusionPrompt,
}

impl ContextGenerator {
    pub fn new(gateway: Arc<Gateway>, sources: [StageTarget; 2], fusion: StageTarget) -> Self {
        ContextGenerator {
            gateway,
            sources,
            fusion,
            context_prompt: ContextPrompt::default(),
            fusion_prompt: FusionPrompt::default(),
        }
    }

    pub fn with_prompts(mut self, context_prompt: ContextPrompt, fusion_prompt: FusionPrompt) -> Self {
        self.context_prompt = context_prompt;
        self.fusion_prompt = fusion_prompt;
        self
    }

    /// Runs both conversation calls concurrently, then fuses them. If exactly
    /// one source fails, fusion proceeds on the other alone.
    pub fn generate(&self, record: &RegionRecord, crop_b64: Option<&str>) -> Result<FusedContext, DialogueError> {
        let base = self.context_prompt.build_request(&record.english_caption, crop_b64)?;
        let results: Vec<Result<_, GatewayError>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .sources
                .iter()
                .map(|target| {
                    let req = target.apply(base.clone());
                    s.spawn(move || self.gateway.complete(&req))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("context worker panicked"))
                .collect()
        });

        let mut provenance = Vec::new();
        let mut sources = Vec::new();
        let mut warnings = Vec::new();
        let mut failures = Vec::new();
        for (target, result) in self.sources.iter().zip(results) {
            match result {
                Ok(resp) => {
                    provenance.push(CallRef {
                        stage: CONTEXT_TAG.into(),
                        backend_id: target.backend_id.clone(),
                        cache_key: resp.cache_key,
                    });
                    sources.push(parse_conversation(&resp.text, &target.backend_id));
                }
                Err(e) if e.is_config() => return Err(e.into()),
                Err(e) => {
                    let msg = format!("context backend `{}` failed: {e}", target.backend_id);
                    tracing::warn!(record = %record.key(), "{msg}; fusing the remaining conversation");
                    warnings.push(msg);
                    sources.push(Conversation::empty(&target.backend_id));
                    failures.push(e);
                }
            }
        }
        if failures.len() == self.sources.len() {
            return Err(failures.remove(0).into());
        }

        let fusion_req = self
            .fusion
            .apply(self.fusion_prompt.build_request(&sources[0], &sources[1])?);
        let resp = self.gateway.complete(&fusion_req)?;
        provenance.push(CallRef {
            stage: FUSION_TAG.into(),
            backend_id: self.fusion.backend_id.clone(),
            cache_key: resp.cache_key,
        });
        let conversation = parse_conversation(&resp.text, FUSION_PRODUCER);
        if !conversation.is_complete() {
            warnings.push("fused conversation is missing at least one response type".into());
        }
        Ok(FusedContext {
            conversation,
            sources,
            provenance,
            warnings,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub found: bool,
    pub stated: Option<usize>,
    pub correct: Option<bool>,
}

static FIRST_INT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

fn asks_word_count(question: &str) -> bool {
    let q = question.to_lowercase();
    q.contains("word") && (q.contains("how many") || q.contains("number") || q.contains("count"))
}

/// Finds the first QA pair asking for the caption's word count and checks
/// the first integer in its answer against [`word_count`].
pub fn wordcount_probe(conv: &Conversation, english_caption: &str) -> ProbeResult {
    let Some(qa) = conv.all_qa().find(|qa| asks_word_count(&qa.question)) else {
        return ProbeResult {
            found: false,
            stated: None,
            correct: None,
        };
    };
    let stated = FIRST_INT
        .find(&qa.answer)
        .and_then(|m| m.as_str().parse::<usize>().ok());
    ProbeResult {
        found: true,
        stated,
        correct: stated.map(|n| n == word_count(english_caption)),
    }
}
