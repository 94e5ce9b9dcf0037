use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Code,
    Shell,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub text: String,
}

fn fence_kind(info: &str) -> Option<BlockKind> {
    match info.split_whitespace().next().unwrap_or("").to_ascii_lowercase().as_str() {
        "" | "python" | "py" | "python3" => Some(BlockKind::Code),
        "bash" | "sh" | "shell" | "console" => Some(BlockKind::Shell),
        _ => None,
    }
}

/// Fenced blocks in response order, then the `ANSWER:` line if present.
/// Unterminated fences and fences in other languages are ignored. An
/// unlabeled fence holding an `ANSWER:` line is a verdict wrapper, not code.
pub fn extract_blocks(response: &str) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut open: Option<(Option<BlockKind>, Vec<&str>)> = None;
    for line in response.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match open.take() {
                None => open = Some((fence_kind(rest), Vec::new())),
                Some((kind, body)) => {
                    if !rest.trim().is_empty() {
                        // a new fence right after an unterminated one
                        open = Some((fence_kind(rest), Vec::new()));
                        continue;
                    }
                    let text = body.join("\n");
                    let is_verdict = rest.is_empty() && text.to_ascii_uppercase().contains("ANSWER:");
                    if let Some(kind) = kind {
                        if !(kind == BlockKind::Code && is_verdict) {
                            blocks.push(Block { kind, text });
                        }
                    }
                }
            }
        } else if let Some((_, body)) = open.as_mut() {
            body.push(line);
        }
    }
    if let Some(answer) = answer_token(response) {
        blocks.push(Block {
            kind: BlockKind::Answer,
            text: answer,
        });
    }
    blocks
}

/// Longest block of `kind`; earliest wins ties.
pub fn longest(blocks: &[Block], kind: BlockKind) -> Option<&str> {
    let mut best: Option<&Block> = None;
    for b in blocks.iter().filter(|b| b.kind == kind) {
        if best.is_none_or(|x| b.text.len() > x.text.len()) {
            best = Some(b);
        }
    }
    best.map(|b| b.text.as_str())
}

fn answer_token(response: &str) -> Option<String> {
    let line = response
        .lines()
        .rev()
        .find(|l| l.to_ascii_uppercase().contains("ANSWER:"))?;
    let at = line.to_ascii_uppercase().find("ANSWER:")? + "ANSWER:".len();
    let token = line[at..]
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*')
        .trim()
        .trim_start_matches(['"', '\''])
        .split(|c: char| c.is_whitespace() || c == '"' || c == '\'' || c == ',' || c == '.')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    (!token.is_empty()).then_some(token)
}

/// The label after `ANSWER:`, which must belong to `vocabulary`.
pub fn parse_answer(response: &str, vocabulary: &[&str]) -> Result<String, LlmError> {
    match answer_token(response) {
        Some(t) if vocabulary.iter().any(|v| v.eq_ignore_ascii_case(&t)) => Ok(t),
        _ => Err(LlmError::UnparseableVerdict),
    }
}
