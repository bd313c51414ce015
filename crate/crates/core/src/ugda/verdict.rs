/// Which of the two presented images a comparison reply favoured, in
/// presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderedChoice {
    First,
    Second,
    Both,
}

fn clean(line: &str) -> String {
    line.replace("**", "").trim().to_string()
}

/// Text after the last `Verdict:` marker, stripped of decoration.
fn verdict_text(reply: &str) -> Option<String> {
    reply.lines().rev().map(clean).find_map(|line| {
        let lower = line.to_ascii_lowercase();
        let at = lower.find("verdict:")?;
        let rest = &line[at + "verdict:".len()..];
        Some(
            rest.trim()
                .trim_start_matches(['"', '\'', '“', '(', '*', '`'])
                .trim_start()
                .to_string(),
        )
    })
}

/// Case-insensitive `phrase` prefix that ends at a word boundary.
fn starts_with_phrase(text: &str, phrase: &str) -> bool {
    let Some(head) = text.get(..phrase.len()) else {
        return false;
    };
    head.eq_ignore_ascii_case(phrase)
        && text[phrase.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric())
}

pub fn parse_realism(reply: &str) -> Option<bool> {
    let text = verdict_text(reply)?;
    if starts_with_phrase(&text, "yes") {
        Some(true)
    } else if starts_with_phrase(&text, "no") {
        Some(false)
    } else {
        None
    }
}

pub fn parse_comparison(reply: &str) -> Option<OrderedChoice> {
    let text = verdict_text(reply)?;
    [
        ("first is more realistic", OrderedChoice::First),
        ("second is more realistic", OrderedChoice::Second),
        ("both look realistic", OrderedChoice::Both),
    ]
    .into_iter()
    .find(|(phrase, _)| starts_with_phrase(&text, phrase))
    .map(|(_, choice)| choice)
}

/// Text following `Assessment:`, up to the verdict line.
pub fn assessment_text(reply: &str) -> String {
    let mut out = Vec::new();
    let mut inside = false;
    for line in reply.lines().map(clean) {
        let lower = line.to_ascii_lowercase();
        if lower.contains("verdict:") {
            break;
        }
        if let Some(at) = lower.find("assessment:") {
            inside = true;
            out.push(line[at + "assessment:".len()..].trim().to_string());
        } else if inside {
            out.push(line);
        }
    }
    out.join("\n").trim().to_string()
}
