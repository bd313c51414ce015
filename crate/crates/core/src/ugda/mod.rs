//! Two-stage realism judgment with a vision-language model.
//!
//! Stage 1 asks whether the inpainted image alone looks realistic. Images
//! that pass are compared against their original twice, once in each
//! presentation order; an inpainting is deceiving when the model prefers it
//! in either order, or calls both realistic both times.

mod batch;
mod mock;
mod prompts;
mod verdict;

use std::collections::HashMap;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::chat::{ChatEndpoint, ChatMessage, ChatRequest, EndpointError};
use crate::imageio;

pub use batch::{assess_manifest, BatchError, BatchOutcome};
pub use mock::MockVlm;
pub use prompts::{comparison_system_prompt, realism_system_prompt};
pub use verdict::{parse_comparison, parse_realism, OrderedChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComparativeVerdict {
    Original,
    Inpainted,
    Both,
}

impl ComparativeVerdict {
    pub const ALL: [ComparativeVerdict; 3] =
        [ComparativeVerdict::Original, ComparativeVerdict::Inpainted, ComparativeVerdict::Both];
}

/// Which comparison call produced a reply: call 1 shows (original,
/// inpainted), call 2 shows (inpainted, original).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareCall {
    OriginalFirst,
    InpaintedFirst,
}

impl CompareCall {
    /// Maps a presentation-order answer back onto the images.
    pub fn resolve(self, choice: OrderedChoice) -> ComparativeVerdict {
        use ComparativeVerdict::*;
        match (self, choice) {
            (_, OrderedChoice::Both) => Both,
            (CompareCall::OriginalFirst, OrderedChoice::First) => Original,
            (CompareCall::OriginalFirst, OrderedChoice::Second) => Inpainted,
            (CompareCall::InpaintedFirst, OrderedChoice::First) => Inpainted,
            (CompareCall::InpaintedFirst, OrderedChoice::Second) => Original,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UgdaState {
    NotAssessed,
    FailedInitialCheck,
    Intermediate,
    Deceiving,
}

impl UgdaState {
    pub fn as_str(self) -> &'static str {
        match self {
            UgdaState::NotAssessed => "NOT_ASSESSED",
            UgdaState::FailedInitialCheck => "FAILED_INITIAL_CHECK",
            UgdaState::Intermediate => "INTERMEDIATE",
            UgdaState::Deceiving => "DECEIVING",
        }
    }

    pub fn is_deceiving(self) -> bool {
        self == UgdaState::Deceiving
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgdaOutcome {
    pub state: UgdaState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<ComparativeVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2: Option<ComparativeVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<String>,
}

impl UgdaOutcome {
    pub fn not_assessed() -> Self {
        Self { state: UgdaState::NotAssessed, s1: None, s2: None, transcripts: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealismVerdict {
    pub realistic: bool,
    pub explanation: String,
    pub raw_reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmConfig {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            model: "chatgpt-4o-latest".into(),
            temperature: 0.1,
            top_p: 1.0,
            max_tokens: 2048,
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Call {
    Realism,
    Compare(CompareCall),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UgdaError {
    #[error("{call:?}: unparseable verdict in {raw:?}")]
    UnparseableVerdict { call: Call, raw: String },
    #[error("{call:?}: {source}")]
    Endpoint {
        call: Call,
        #[source]
        source: EndpointError,
    },
    #[error("cannot encode image for the endpoint: {0}")]
    Image(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrefilterError {
    #[error("no quality score for record `{0}`")]
    MissingScore(String),
    #[error("prefilter fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
}

/// Result of an assessment that stopped early, with what was learned so far.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{error}")]
pub struct AssessError {
    pub partial: UgdaOutcome,
    #[source]
    pub error: UgdaError,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prefilter {
    /// Ids sent on to assessment, best score first.
    pub selected: Vec<String>,
    /// Ids left as `NOT_ASSESSED`, sorted.
    pub not_assessed: Vec<String>,
}

/// Keeps the top `⌈fraction·N⌉` records by quality score, ties broken by id.
pub fn prefilter_by_quality(
    record_ids: &[String],
    scores: &HashMap<String, f64>,
    fraction: f64,
) -> Result<Prefilter, PrefilterError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(PrefilterError::InvalidFraction(fraction));
    }
    let mut scored = Vec::with_capacity(record_ids.len());
    for id in record_ids {
        let s = *scores.get(id).ok_or_else(|| PrefilterError::MissingScore(id.clone()))?;
        scored.push((id.clone(), s));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    // The epsilon keeps 0.3·10 from ceiling to 4.
    let keep = ((fraction * scored.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let keep = keep.min(scored.len());
    let mut not_assessed: Vec<String> = scored[keep..].iter().map(|(id, _)| id.clone()).collect();
    not_assessed.sort();
    Ok(Prefilter {
        selected: scored.into_iter().take(keep).map(|(id, _)| id).collect(),
        not_assessed,
    })
}

/// The deceptiveness rule: the inpainted image is preferred in either order,
/// or both orders call the pair equally realistic.
pub fn classify(s1: ComparativeVerdict, s2: ComparativeVerdict) -> bool {
    use ComparativeVerdict::*;
    s1 == Inpainted || s2 == Inpainted || (s1 == Both && s2 == Both)
}

fn encode(img: &DynamicImage) -> Result<String, UgdaError> {
    imageio::to_png_b64(img).map_err(|e| UgdaError::Image(e.to_string()))
}

/// Sends one judgment request, allowing one format-reminder retry. Returns
/// the parsed value and every raw reply seen.
fn ask<T>(
    vlm: &dyn ChatEndpoint,
    cfg: &VlmConfig,
    call: Call,
    mut messages: Vec<ChatMessage>,
    parse: impl Fn(&str) -> Option<T>,
    transcripts: &mut Vec<String>,
) -> Result<(T, String), UgdaError> {
    let mut last = String::new();
    for attempt in 0..2 {
        let request = ChatRequest {
            model: cfg.model.clone(),
            messages: messages.clone(),
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_tokens: cfg.max_tokens,
        };
        let reply = vlm.complete(&request).map_err(|source| UgdaError::Endpoint { call, source })?;
        transcripts.push(reply.clone());
        if let Some(v) = parse(&reply) {
            return Ok((v, reply));
        }
        if attempt == 0 {
            messages.push(ChatMessage::assistant(reply.clone()));
            messages.push(ChatMessage::user(prompts::FORMAT_REMINDER));
        }
        last = reply;
    }
    Err(UgdaError::UnparseableVerdict { call, raw: last })
}

fn realism_with_log(
    image: &DynamicImage,
    vlm: &dyn ChatEndpoint,
    cfg: &VlmConfig,
    transcripts: &mut Vec<String>,
) -> Result<RealismVerdict, UgdaError> {
    let messages = vec![
        ChatMessage::system(realism_system_prompt()),
        ChatMessage::user(prompts::REALISM_USER).with_images(vec![encode(image)?]),
    ];
    let (realistic, raw) = ask(vlm, cfg, Call::Realism, messages, parse_realism, transcripts)?;
    Ok(RealismVerdict { realistic, explanation: verdict::assessment_text(&raw), raw_reply: raw })
}

/// Stage 1: single-image realism check.
pub fn stage1_realism(image: &DynamicImage, vlm: &dyn ChatEndpoint, cfg: &VlmConfig) -> Result<RealismVerdict, UgdaError> {
    realism_with_log(image, vlm, cfg, &mut Vec::new())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub s1: ComparativeVerdict,
    pub s2: ComparativeVerdict,
    pub raw_first: String,
    pub raw_second: String,
}

fn compare_with_log(
    original: &DynamicImage,
    inpainted: &DynamicImage,
    vlm: &dyn ChatEndpoint,
    cfg: &VlmConfig,
    transcripts: &mut Vec<String>,
) -> Result<Comparison, UgdaError> {
    let orig = encode(original)?;
    let inp = encode(inpainted)?;
    let mut run = |call: CompareCall, images: Vec<String>| {
        let messages = vec![
            ChatMessage::system(comparison_system_prompt()),
            ChatMessage::user(prompts::COMPARISON_USER).with_images(images),
        ];
        ask(vlm, cfg, Call::Compare(call), messages, parse_comparison, transcripts)
            .map(|(choice, raw)| (call.resolve(choice), raw))
    };
    // Both orders are always queried, in this order.
    let first = run(CompareCall::OriginalFirst, vec![orig.clone(), inp.clone()]);
    let second = run(CompareCall::InpaintedFirst, vec![inp, orig]);
    let (s1, raw_first) = first?;
    let (s2, raw_second) = second?;
    Ok(Comparison { s1, s2, raw_first, raw_second })
}

/// Stage 2: order-reversed pairwise comparison. Always issues both calls.
pub fn stage2_compare(
    original: &DynamicImage,
    inpainted: &DynamicImage,
    vlm: &dyn ChatEndpoint,
    cfg: &VlmConfig,
) -> Result<Comparison, UgdaError> {
    compare_with_log(original, inpainted, vlm, cfg, &mut Vec::new())
}

/// Full assessment of one (original, inpainted) pair.
pub fn assess(
    original: &DynamicImage,
    inpainted: &DynamicImage,
    vlm: &dyn ChatEndpoint,
    cfg: &VlmConfig,
) -> Result<UgdaOutcome, AssessError> {
    let mut transcripts = Vec::new();
    let fail = |error: UgdaError, transcripts: Vec<String>| AssessError {
        partial: UgdaOutcome { state: UgdaState::NotAssessed, s1: None, s2: None, transcripts },
        error,
    };
    let verdict = match realism_with_log(inpainted, vlm, cfg, &mut transcripts) {
        Ok(v) => v,
        Err(e) => return Err(fail(e, transcripts)),
    };
    if !verdict.realistic {
        return Ok(UgdaOutcome { state: UgdaState::FailedInitialCheck, s1: None, s2: None, transcripts });
    }
    match compare_with_log(original, inpainted, vlm, cfg, &mut transcripts) {
        Ok(c) => Ok(UgdaOutcome {
            state: if classify(c.s1, c.s2) { UgdaState::Deceiving } else { UgdaState::Intermediate },
            s1: Some(c.s1),
            s2: Some(c.s2),
            transcripts,
        }),
        Err(e) => Err(fail(e, transcripts)),
    }
}
