use sha2::{Digest, Sha256};

use super::{build_system_prompt, PromptStage};
use crate::chat::{ChatEndpoint, ChatRequest, EndpointError, Role};

const SUBJECTS: [&str; 8] = [
    "a ceramic vase of sunflowers",
    "a sleeping tabby cat",
    "a stack of old books",
    "a copper kettle",
    "a potted fern",
    "a red umbrella",
    "a wicker basket of apples",
    "a brass desk lamp",
];

const FINISHES: [&str; 4] = [
    "in soft morning light",
    "matching the surrounding colors",
    "with natural shadows",
    "slightly out of focus",
];

/// Deterministic stand-in for the language model: picks an offered object
/// and composes a prompt from hashes of the user message.
#[derive(Debug, Clone, Default)]
pub struct MockLlm;

impl ChatEndpoint for MockLlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let system = request
            .messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let user = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let labels: Vec<&str> = user
            .lines()
            .skip_while(|l| *l != "Objects:")
            .skip(1)
            .filter_map(|l| l.strip_prefix("- "))
            .collect();
        if labels.is_empty() {
            return Err(EndpointError::Status { status: 400, body: "no objects offered".into() });
        }
        let digest = Sha256::digest(user.as_bytes());
        let pick = |i: usize, n: usize| digest[i] as usize % n;
        let object = labels[pick(0, labels.len())];
        if system == build_system_prompt(PromptStage::Removal) {
            return Ok(format!("Object: {object}"));
        }
        Ok(format!(
            "Object: {object}\nPrompt: Inpaint the masked area with {} {}",
            SUBJECTS[pick(1, SUBJECTS.len())],
            FINISHES[pick(2, FINISHES.len())]
        ))
    }
}
