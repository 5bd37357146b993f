//! Deterministic offline backend.
//!
//! Output is a pure function of the seed and the request's cache key, shaped
//! by the request tag so every pipeline stage receives well-formed input:
//!
//! - `context`: a three-section conversation whose word-count answer is the
//!   true word count of the caption embedded in the prompt;
//! - `fusion`: a merge of the two conversations embedded in the prompt;
//! - `translate`: the source segment prefixed with `[<target_lang>]`;
//! - `caption`: one line of words in the requested language's script.

use std::sync::LazyLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{cache_key, Backend, BackendRequest, BackendResponse, CallError, Completion, FinishReason, Usage};
use crate::corpus::word_count;
use crate::dialogue::{
    caption_from_context_prompt, conversations_from_fusion_prompt, parse_conversation, Conversation, QaPair,
};
use crate::language::Language;

pub const MOCK_KIND: &str = "mock";
/// Backend id the offline configuration registers the mock under.
pub const MOCK_BACKEND_ID: &str = "mock";

pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> &'static str {
        MOCK_KIND
    }

    fn is_remote(&self) -> bool {
        false
    }

    fn call(&self, request: &BackendRequest) -> Result<Completion, CallError> {
        Ok(generate(request, self.seed))
    }
}

/// What the mock backend answers for `request`, with `cache_hit = false`.
pub fn mock_complete(request: &BackendRequest, seed: u64) -> BackendResponse {
    let c = generate(request, seed);
    BackendResponse {
        text: c.text,
        finish_reason: c.finish_reason,
        usage: c.usage,
        cache_hit: false,
        cache_key: cache_key(request),
    }
}

fn rng_for(request: &BackendRequest, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(cache_key(request).as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn generate(request: &BackendRequest, seed: u64) -> Completion {
    let mut rng = rng_for(request, seed);
    let prompt = request.prompt_text();
    let text = match request.request_tag.as_str() {
        "context" => context_reply(caption_from_context_prompt(&prompt).unwrap_or(""), &mut rng),
        "fusion" => fusion_reply(&prompt, &mut rng),
        "translate" => translate_reply(request),
        "caption" => caption_reply(&prompt, &mut rng),
        other => format!("mock reply to a `{other}` request ({:08x})", rng.random::<u32>()),
    };
    let completion_tokens = text.split_whitespace().count() as u64;
    Completion {
        text,
        finish_reason: FinishReason::Complete,
        usage: Some(Usage {
            prompt_tokens: prompt.split_whitespace().count() as u64,
            completion_tokens,
        }),
    }
}

const OBJECT_QUESTIONS: [(&str, &str); 4] = [
    (
        "What is the main subject of this region?",
        "The main subject of the region is described by the caption: {c}.",
    ),
    (
        "What does this part of the image show?",
        "This part of the image shows {c}.",
    ),
    (
        "What can be seen in the highlighted area?",
        "The highlighted area shows {c}.",
    ),
    (
        "Which objects are visible here?",
        "The visible content matches the caption: {c}.",
    ),
];
const SETTING_ANSWERS: [&str; 4] = [
    "The region is well lit and the objects are clearly visible.",
    "The objects are close to the center of the region.",
    "The background is plain, so the main subject stands out.",
    "Nothing else in the region draws attention away from the subject.",
];
const REASONING: [(&str, &str); 3] = [
    (
        "Why might this scene have been photographed?",
        "The photograph captures an everyday moment. The caption \"{c}\" suggests the photographer wanted to record the objects as they appear in their usual setting.",
    ),
    (
        "What can be inferred about the surroundings?",
        "Since the region shows {c}, the surroundings are likely an ordinary place where such objects are commonly found.",
    ),
    (
        "How would you describe this scene to someone who cannot see it?",
        "I would say that the image region shows {c}, and that the objects are arranged naturally within the frame.",
    ),
];

fn context_reply(caption: &str, rng: &mut ChaCha8Rng) -> String {
    let caption = caption.trim();
    let count = word_count(caption);
    let (q, a) = OBJECT_QUESTIONS.choose(rng).copied().unwrap();
    let setting = SETTING_ANSWERS.choose(rng).copied().unwrap();
    let (rq, ra) = REASONING.choose(rng).copied().unwrap();
    let conv = Conversation {
        short_qa: vec![
            QaPair::new(q, a.replace("{c}", caption)),
            QaPair::new(
                "How many words are in the English caption?",
                format!("The English caption has {count} words."),
            ),
            QaPair::new("How would you describe the setting?", setting),
        ],
        detailed_description: format!("The image region shows {caption}. {setting}"),
        complex_qa: vec![QaPair::new(rq, ra.replace("{c}", caption))],
        ..Default::default()
    };
    conv.to_canonical_text()
}

fn merge_qa(into: &mut Vec<QaPair>, from: &[QaPair]) {
    for qa in from {
        let key = qa.question.to_lowercase();
        if !into.iter().any(|q| q.question.to_lowercase() == key) {
            into.push(qa.clone());
        }
    }
}

fn fusion_reply(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let Some((a, b)) = conversations_from_fusion_prompt(prompt) else {
        return context_reply("an unidentified scene", rng);
    };
    let a = parse_conversation(&a, "a");
    let b = parse_conversation(&b, "b");
    let mut fused = Conversation::default();
    merge_qa(&mut fused.short_qa, &a.short_qa);
    merge_qa(&mut fused.short_qa, &b.short_qa);
    merge_qa(&mut fused.complex_qa, &a.complex_qa);
    merge_qa(&mut fused.complex_qa, &b.complex_qa);
    fused.detailed_description = if b.detailed_description.len() > a.detailed_description.len() {
        b.detailed_description
    } else {
        a.detailed_description
    };
    if fused.is_empty() {
        return context_reply("an unidentified scene", rng);
    }
    fused.to_canonical_text()
}

fn translate_reply(request: &BackendRequest) -> String {
    let target = request.params.get("target_lang").map(String::as_str).unwrap_or("xx");
    let source = request
        .params
        .get("source_text")
        .cloned()
        .unwrap_or_else(|| request.prompt_text());
    format!("[{target}] {source}")
}

static CAPTION_LANGUAGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Provide ONLY the (\S+) caption").unwrap());
static ENGLISH_CAPTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^1\. English caption \(Weight: \d+%\): (.*)$").unwrap());

const HINDI_WORDS: [&str; 16] = [
    "एक",
    "लाल",
    "बस",
    "सड़क",
    "पर",
    "है",
    "आदमी",
    "कुत्ता",
    "पेड़",
    "हरा",
    "नीला",
    "खिड़की",
    "मेज",
    "किताब",
    "बच्चा",
    "घर",
];
const BENGALI_WORDS: [&str; 12] = [
    "একটি",
    "লাল",
    "বাস",
    "রাস্তা",
    "গাছ",
    "মানুষ",
    "কুকুর",
    "বাড়ি",
    "সবুজ",
    "জানালা",
    "টেবিল",
    "বই",
];
const MALAYALAM_WORDS: [&str; 12] = [
    "ഒരു",
    "ചുവന്ന",
    "ബസ്",
    "റോഡ്",
    "മരം",
    "മനുഷ്യൻ",
    "നായ",
    "വീട്",
    "പച്ച",
    "ജനൽ",
    "മേശ",
    "പുസ്തകം",
];
const HAUSA_WORDS: [&str; 12] = [
    "mota", "ja", "hanya", "itace", "mutum", "kare", "gida", "kore", "taga", "tebur", "littafi", "ɗaki",
];

pub fn word_bank(language: Language) -> &'static [&'static str] {
    match language {
        Language::Hi => &HINDI_WORDS,
        Language::Bn => &BENGALI_WORDS,
        Language::Ml => &MALAYALAM_WORDS,
        Language::Ha => &HAUSA_WORDS,
    }
}

fn caption_reply(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let language = CAPTION_LANGUAGE
        .captures(prompt)
        .and_then(|c| Language::from_name(&c[1]))
        .unwrap_or(Language::Hi);
    let english_words = ENGLISH_CAPTION
        .captures(prompt)
        .map(|c| word_count(&c[1]))
        .unwrap_or(5)
        .max(1);
    // Within one word of the English length.
    let n = (english_words as i64 + rng.random_range(-1..=1)).max(1) as usize;
    let bank = word_bank(language);
    (0..n).map(|_| *bank.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{build_context_prompt, build_fusion_prompt, wordcount_probe};
    use crate::gateway::Message;
    use crate::language::Script;

    fn context_request(caption: &str) -> BackendRequest {
        build_context_prompt(caption, "").unwrap().with_target("mock-a", "mock")
    }

    #[test]
    fn same_seed_same_bytes() {
        let req = context_request("soap is in the dish");
        assert_eq!(mock_complete(&req, 7), mock_complete(&req, 7));
        let other_backend = req.clone().with_target("mock-b", "mock");
        assert_ne!(
            mock_complete(&req, 7).cache_key,
            mock_complete(&other_backend, 7).cache_key
        );
    }

    #[test]
    fn context_reply_states_true_word_count() {
        let resp = mock_complete(&context_request("soap is in the dish"), 7);
        let conv = parse_conversation(&resp.text, "mock");
        assert!(conv.is_complete());
        assert!(conv
            .short_qa
            .iter()
            .any(|qa| qa.answer == "The English caption has 5 words."));
        assert_eq!(wordcount_probe(&conv, "soap is in the dish").correct, Some(true));
    }

    #[test]
    fn fusion_reply_is_complete_and_keeps_probe() {
        let a = parse_conversation(&mock_complete(&context_request("a man riding a horse"), 1).text, "a");
        let b = parse_conversation(
            &mock_complete(&context_request("a man riding a horse").with_target("mock-b", "m"), 1).text,
            "b",
        );
        let fusion = build_fusion_prompt(&a, &b).unwrap().with_target("mock-f", "mock");
        let fused = parse_conversation(&mock_complete(&fusion, 1).text, "fusion");
        assert!(fused.is_complete());
        assert_eq!(wordcount_probe(&fused, "a man riding a horse").correct, Some(true));
    }

    #[test]
    fn caption_reply_uses_target_script() {
        for lang in Language::ALL {
            let prompt = format!(
                "1. English caption (Weight: 50%): soap is in the dish\nProvide ONLY the {} caption.",
                lang.name()
            );
            let req = BackendRequest::new("caption", vec![Message::user(prompt)], 300).with_target("m", "m");
            let text = mock_complete(&req, 3).text;
            assert!(!text.is_empty());
            for c in text.chars() {
                assert!(
                    c == ' ' || c.is_numeric() || Script::of(c) == Some(lang.script()),
                    "{lang}: unexpected {c:?} in {text}"
                );
            }
            let n = text.split(' ').count();
            assert!((4..=6).contains(&n));
        }
    }

    #[test]
    fn translate_reply_prefixes_language() {
        let req = BackendRequest::new("translate", vec![Message::user("ignored")], 64)
            .with_param("target_lang", "hi")
            .with_param("source_text", "The soap is white.");
        assert_eq!(mock_complete(&req, 0).text, "[hi] The soap is white.");
    }
}
