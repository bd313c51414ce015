use super::prompts::PROMPT_PREFIX;
use super::{PromptSpec, PromptStage};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("reply has no `Object:` line")]
    MissingObjectLine,
    #[error("reply has no `Prompt:` line")]
    MissingPromptLine,
    #[error("object `{0}` is not in the offered list")]
    ObjectNotInInventory(String),
    #[error("prompt is empty once the template prefix is removed")]
    EmptyPromptAfterStrip,
}

/// Strips markdown decoration (`**`, bullets, headings) from a reply line.
fn clean_line(line: &str) -> String {
    line.replace("**", "")
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '#' | '-' | '>'))
        .trim_end()
        .to_string()
}

/// If `line` starts with `key:` (case-insensitive), returns the rest.
fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let head = line.get(..key.len())?;
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    line[key.len()..].trim_start().strip_prefix(':').map(str::trim)
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('{', '}'), ('[', ']'), ('“', '”')] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    s
}

/// Removes the template prefix (case-insensitive, with an optional
/// ellipsis), repeatedly, so the result never starts with it.
pub fn strip_prompt_prefix(prompt: &str) -> String {
    let mut rest = unquote(prompt);
    loop {
        let Some(head) = rest.get(..PROMPT_PREFIX.len()) else { break };
        if !head.eq_ignore_ascii_case(PROMPT_PREFIX) {
            break;
        }
        rest = rest[PROMPT_PREFIX.len()..].trim_start();
        rest = rest.trim_start_matches(['.', '…', ':']).trim_start();
    }
    unquote(rest).to_string()
}

fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Parses an `Object:` / `Prompt:` reply against the labels that were
/// offered to the model.
pub fn parse_llm_reply(reply: &str, inventory: &[String], stage: PromptStage) -> Result<PromptSpec, ParseError> {
    let lines: Vec<String> = reply.lines().map(clean_line).collect();

    let (object_idx, raw_object) = lines
        .iter()
        .enumerate()
        .find_map(|(i, l)| field(l, "object").map(|v| (i, v.to_string())))
        .ok_or(ParseError::MissingObjectLine)?;
    let raw_object = unquote(&raw_object).trim_end_matches('.').trim().to_string();
    let wanted = normalize_label(&raw_object);
    let label = inventory
        .iter()
        .find(|l| normalize_label(l) == wanted)
        .ok_or_else(|| ParseError::ObjectNotInInventory(raw_object.clone()))?;

    if stage == PromptStage::Removal {
        return Ok(PromptSpec {
            object_label: label.clone(),
            prompt_text: String::new(),
            raw_reply: reply.to_string(),
            mask_id: None,
            llm_config: None,
        });
    }

    let prompt_idx = lines
        .iter()
        .enumerate()
        .skip(object_idx + 1)
        .chain(lines.iter().enumerate().take(object_idx))
        .find(|(_, l)| field(l, "prompt").is_some())
        .map(|(i, _)| i)
        .ok_or(ParseError::MissingPromptLine)?;
    let mut prompt = field(&lines[prompt_idx], "prompt").unwrap_or_default().to_string();
    // A prompt may wrap onto following lines until another field or a blank line.
    for cont in lines.iter().skip(prompt_idx + 1) {
        if cont.is_empty() || field(cont, "object").is_some() || field(cont, "prompt").is_some() {
            break;
        }
        prompt.push(' ');
        prompt.push_str(cont.trim());
    }
    let prompt_text = strip_prompt_prefix(&prompt);
    if prompt_text.is_empty() {
        return Err(ParseError::EmptyPromptAfterStrip);
    }
    Ok(PromptSpec {
        object_label: label.clone(),
        prompt_text,
        raw_reply: reply.to_string(),
        mask_id: None,
        llm_config: None,
    })
}
