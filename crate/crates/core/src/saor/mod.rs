//! Semantically aligned object replacement: a chat model picks one object
//! from an image's inventory and writes the inpainting prompt for it, given
//! the caption.

mod mock;
mod parse;
mod prompts;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatEndpoint, ChatMessage, ChatRequest, EndpointError, Role};
use crate::manifest::{DatasetManifest, ImageRecord};

pub use mock::MockLlm;
pub use parse::{parse_llm_reply, strip_prompt_prefix, ParseError};
pub use prompts::{build_system_prompt, build_user_message, PROMPT_PREFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptStage {
    FirstInpaint,
    SecondInpaint,
    Removal,
}

impl std::str::FromStr for PromptStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "first" | "first_inpaint" => Ok(PromptStage::FirstInpaint),
            "second" | "second_inpaint" => Ok(PromptStage::SecondInpaint),
            "removal" => Ok(PromptStage::Removal),
            other => Err(format!("unknown stage `{other}` (expected first|second|removal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub object_label: String,
    pub mask_id: String,
    pub area_fraction: f64,
}

impl InventoryItem {
    pub fn new(label: impl Into<String>, mask_id: impl Into<String>, area_fraction: f64) -> Self {
        Self { object_label: label.into(), mask_id: mask_id.into(), area_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEdit {
    pub object_label: String,
    pub prompt: String,
}

/// Caption plus object inventory of one image, and for second-round
/// requests the edit already applied to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticContext {
    pub caption: String,
    pub inventory: Vec<InventoryItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_edit: Option<PriorEdit>,
}

impl SemanticContext {
    /// Context for an authentic image from its caption and masks.
    pub fn from_manifest(manifest: &DatasetManifest, image: &ImageRecord) -> Self {
        let inventory = manifest
            .masks_for_image(&image.id)
            .into_iter()
            .map(|m| InventoryItem::new(m.object_label.clone(), m.id.clone(), m.area_fraction))
            .collect();
        Self {
            caption: image.caption.clone().unwrap_or_default(),
            inventory,
            prior_edit: None,
        }
    }

    /// Labels shown to the model: trimmed, deduplicated in first-seen order,
    /// and for the second round without the already edited object.
    pub fn offered_labels(&self, stage: PromptStage) -> Vec<String> {
        let excluded = match (stage, &self.prior_edit) {
            (PromptStage::SecondInpaint, Some(prior)) => Some(prior.object_label.trim().to_lowercase()),
            _ => None,
        };
        let mut out: Vec<String> = Vec::new();
        for item in &self.inventory {
            let label = item.object_label.trim();
            let key = label.to_lowercase();
            if excluded.as_deref() == Some(key.as_str()) {
                continue;
            }
            if !out.iter().any(|l| l.to_lowercase() == key) {
                out.push(label.to_string());
            }
        }
        out
    }

    /// Mask for a chosen label: the largest-area mask carrying it, ties to
    /// the smallest mask id.
    pub fn mask_for_label(&self, label: &str) -> Option<&InventoryItem> {
        let key = label.trim().to_lowercase();
        self.inventory
            .iter()
            .filter(|item| item.object_label.trim().to_lowercase() == key)
            .max_by(|a, b| {
                a.area_fraction
                    .total_cmp(&b.area_fraction)
                    .then_with(|| b.mask_id.cmp(&a.mask_id))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 1.2,
            top_p: 0.8,
            max_tokens: 40,
            endpoint: None,
        }
    }
}

/// A selected object and its prompt, with the template prefix removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub object_label: String,
    /// Empty for removal.
    pub prompt_text: String,
    #[serde(default)]
    pub raw_reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_config: Option<LlmConfig>,
}

impl PromptSpec {
    pub fn new(label: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            object_label: label.into(),
            prompt_text: prompt.into(),
            raw_reply: String::new(),
            mask_id: None,
            llm_config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SaorError {
    #[error("invalid semantic context: {0}")]
    InvalidContext(String),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("no usable reply after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: usize, last: ParseError },
}

fn check_context(ctx: &SemanticContext, stage: PromptStage, labels: &[String]) -> Result<(), SaorError> {
    if stage == PromptStage::SecondInpaint && ctx.prior_edit.is_none() {
        return Err(SaorError::InvalidContext("second-round request without a prior edit".into()));
    }
    if labels.is_empty() {
        return Err(SaorError::InvalidContext("no objects to offer".into()));
    }
    Ok(())
}

fn corrective_feedback(err: &ParseError, stage: PromptStage) -> String {
    let format = if stage == PromptStage::Removal {
        "Object: <one object from the list>"
    } else {
        "Object: <one object from the list>\nPrompt: Inpaint the masked area with <your prompt>"
    };
    format!("Your previous answer could not be used ({err}). Answer again using exactly this format:\n{format}")
}

/// Queries the model, retrying malformed replies up to `retries` times with
/// the parse error fed back as a corrective user turn.
pub fn select_and_prompt(
    ctx: &SemanticContext,
    stage: PromptStage,
    llm: &dyn ChatEndpoint,
    cfg: &LlmConfig,
    retries: usize,
) -> Result<PromptSpec, SaorError> {
    let labels = ctx.offered_labels(stage);
    check_context(ctx, stage, &labels)?;

    let mut messages = vec![
        ChatMessage::system(build_system_prompt(stage)),
        ChatMessage::user(build_user_message(ctx, stage, &labels)),
    ];
    let mut last = None;
    for _ in 0..=retries {
        let request = ChatRequest {
            model: cfg.model.clone(),
            messages: messages.clone(),
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_tokens: cfg.max_tokens,
        };
        let reply = llm.complete(&request)?;
        match parse_llm_reply(&reply, &labels, stage) {
            Ok(mut spec) => {
                spec.mask_id = ctx.mask_for_label(&spec.object_label).map(|m| m.mask_id.clone());
                spec.llm_config = Some(cfg.clone());
                return Ok(spec);
            }
            Err(err) => {
                log::debug!("unusable reply ({err}): {reply:?}");
                messages.push(ChatMessage { role: Role::Assistant, content: reply, images: Vec::new() });
                messages.push(ChatMessage::user(corrective_feedback(&err, stage)));
                last = Some(err);
            }
        }
    }
    Err(SaorError::ExhaustedRetries {
        attempts: retries + 1,
        last: last.expect("at least one attempt"),
    })
}

/// Runs [`select_and_prompt`] over many contexts with at most `concurrency`
/// requests in flight. Results keep input order.
pub fn select_batch(
    contexts: &[SemanticContext],
    stage: PromptStage,
    llm: &dyn ChatEndpoint,
    cfg: &LlmConfig,
    retries: usize,
    concurrency: usize,
) -> Vec<Result<PromptSpec, SaorError>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        contexts
            .par_iter()
            .map(|ctx| select_and_prompt(ctx, stage, llm, cfg, retries))
            .collect()
    })
}
