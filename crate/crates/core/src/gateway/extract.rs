//! Parsing of structured blocks out of model responses.
//!
//! Templates instruct fenced, labeled output; these extractors are the
//! matching readers. Errors carry the raw response so callers can log the
//! unparseable text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

/// The block kinds a template can demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Code,
    Plan,
    Verdict,
    Suggestion,
    ScoreList,
}

/// Structured value extracted from a response.
#[derive(Debug, Clone, PartialEq)]
pub enum Extracted {
    Text(String),
    Verdict(PlanVerdict),
    Scores(Vec<(String, Real)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanVerdict {
    Accept,
    Revise,
}

#[derive(Debug, Error)]
#[error("no {kind:?} block found in response: {raw:?}")]
pub struct ExtractError {
    pub kind: BlockKind,
    pub raw: String,
}

impl ExtractError {
    fn new(kind: BlockKind, raw: &str) -> Self {
        ExtractError {
            kind,
            raw: raw.to_string(),
        }
    }
}

/// Extract the first well-formed block of `kind` from `response`.
pub fn extract_block(response: &str, kind: BlockKind) -> Result<Extracted, ExtractError> {
    match kind {
        BlockKind::Code => extract_code(response).map(Extracted::Text),
        BlockKind::Plan => extract_plan(response).map(Extracted::Text),
        BlockKind::Verdict => extract_verdict(response).map(Extracted::Verdict),
        BlockKind::Suggestion => extract_suggestion(response).map(Extracted::Text),
        BlockKind::ScoreList => extract_score_list(response).map(Extracted::Scores),
    }
}

/// Interior of the first fenced code block.
pub fn extract_code(response: &str) -> Result<String, ExtractError> {
    fenced_blocks(response)
        .into_iter()
        .next()
        .map(|b| b.body)
        .ok_or_else(|| ExtractError::new(BlockKind::Code, response))
}

/// Interior of the first `plan`-tagged fenced block, else the first fenced
/// block of any tag.
pub fn extract_plan(response: &str) -> Result<String, ExtractError> {
    let blocks = fenced_blocks(response);
    blocks
        .iter()
        .find(|b| b.tag == "plan")
        .or_else(|| blocks.first())
        .map(|b| b.body.clone())
        .ok_or_else(|| ExtractError::new(BlockKind::Plan, response))
}

/// Interior of the first `log`-tagged fenced block, split into lines.
pub fn extract_log_lines(response: &str) -> Vec<String> {
    fenced_blocks(response)
        .into_iter()
        .find(|b| b.tag == "log")
        .map(|b| b.body.lines().map(str::to_string).collect())
        .unwrap_or_default()
}

/// The `VERDICT: accept|revise` line.
pub fn extract_verdict(response: &str) -> Result<PlanVerdict, ExtractError> {
    for line in response.lines() {
        let Some(value) = strip_label(line, "VERDICT") else {
            continue;
        };
        match value.to_ascii_lowercase().as_str() {
            "accept" => return Ok(PlanVerdict::Accept),
            "revise" => return Ok(PlanVerdict::Revise),
            _ => {}
        }
    }
    Err(ExtractError::new(BlockKind::Verdict, response))
}

/// First fenced block if any, else the whole trimmed response.
pub fn extract_suggestion(response: &str) -> Result<String, ExtractError> {
    let text = fenced_blocks(response)
        .into_iter()
        .next()
        .map(|b| b.body)
        .unwrap_or_else(|| response.trim().to_string());
    if text.is_empty() {
        Err(ExtractError::new(BlockKind::Suggestion, response))
    } else {
        Ok(text)
    }
}

/// `name: value` or `name = value` lines, in order.
pub fn extract_score_list(response: &str) -> Result<Vec<(String, Real)>, ExtractError> {
    let mut scores = Vec::new();
    for line in response.lines() {
        let line = line.trim();
        let Some((name, value)) = line.split_once(':').or_else(|| line.split_once('=')) else {
            continue;
        };
        let name = name.trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            continue;
        }
        if let Ok(v) = value.trim().parse::<Real>() {
            scores.push((name.to_string(), v));
        }
    }
    if scores.is_empty() {
        Err(ExtractError::new(BlockKind::ScoreList, response))
    } else {
        Ok(scores)
    }
}

/// Value of the first `LABEL: value` line, matched case-insensitively.
pub fn labeled_line(response: &str, label: &str) -> Option<String> {
    response
        .lines()
        .find_map(|line| strip_label(line, label))
        .map(|v| v.to_string())
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let line = line.trim_start();
    if line.len() < label.len() + 1
        || !line.is_char_boundary(label.len())
        || !line[..label.len()].eq_ignore_ascii_case(label)
    {
        return None;
    }
    line[label.len()..].strip_prefix(':').map(str::trim)
}

struct Fenced {
    tag: String,
    body: String,
}

/// All fenced blocks in order. A fence is a line starting with three
/// backticks; an unclosed fence extends to the end of the response.
fn fenced_blocks(response: &str) -> Vec<Fenced> {
    let mut blocks = Vec::new();
    let mut tag: Option<String> = None;
    let mut body: Vec<&str> = Vec::new();
    for line in response.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match tag.take() {
                Some(t) => blocks.push(Fenced {
                    tag: t,
                    body: std::mem::take(&mut body).join("\n"),
                }),
                None => tag = Some(rest.trim().to_ascii_lowercase()),
            }
        } else if tag.is_some() {
            body.push(line);
        }
    }
    if let Some(t) = tag {
        blocks.push(Fenced {
            tag: t,
            body: body.join("\n"),
        });
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_fenced_block_yields_interior() {
        let response = "Here you go:\n```python\nprint(42)\n```\nDone.";
        assert_eq!(extract_code(response).unwrap(), "print(42)");
    }

    #[test]
    fn first_of_several_blocks_wins() {
        let response = "```sh\necho a\n```\ntext\n```sh\necho b\n```";
        assert_eq!(extract_code(response).unwrap(), "echo a");
    }

    #[test]
    fn prose_only_code_extraction_fails_with_raw() {
        let err = extract_code("no code here, sorry").expect_err("fails");
        assert_eq!(err.kind, BlockKind::Code);
        assert!(err.raw.contains("no code here"));
    }

    #[test]
    fn unclosed_fence_extends_to_end() {
        let response = "```\necho tail";
        assert_eq!(extract_code(response).unwrap(), "echo tail");
    }

    #[test]
    fn plan_prefers_tagged_block() {
        let response = "```log\nnoise\n```\n```plan\n1. do it\n```";
        assert_eq!(extract_plan(response).unwrap(), "1. do it");
    }

    #[test]
    fn verdict_literal_grammar() {
        assert_eq!(
            extract_verdict("VERDICT: accept").unwrap(),
            PlanVerdict::Accept
        );
        assert_eq!(
            extract_verdict("notes\n  verdict: Revise\nmore").unwrap(),
            PlanVerdict::Revise
        );
        assert!(extract_verdict("VERDICT: maybe").is_err());
        assert!(extract_verdict("nothing here").is_err());
    }

    #[test]
    fn suggestion_falls_back_to_whole_text() {
        assert_eq!(
            extract_suggestion("  change line 3  ").unwrap(),
            "change line 3"
        );
        assert!(extract_suggestion("   ").is_err());
    }

    #[test]
    fn score_list_accepts_colon_and_equals() {
        let scores = extract_score_list("alpha: 0.5\nbeta = 1\nskip this line").unwrap();
        assert_eq!(
            scores,
            vec![("alpha".to_string(), 0.5), ("beta".to_string(), 1.0)]
        );
        assert!(extract_score_list("prose").is_err());
    }

    #[test]
    fn labeled_line_is_case_insensitive() {
        assert_eq!(
            labeled_line("MODEL: astra-coder\nRATIONALE: fast", "model").as_deref(),
            Some("astra-coder")
        );
        assert_eq!(labeled_line("MODELX: nope", "model"), None);
        assert_eq!(labeled_line("no labels", "model"), None);
    }

    #[test]
    fn log_lines_come_from_log_block() {
        let response = "VERDICT: accept\n```plan\n1. x\n```\n```log\na\nb\n```";
        assert_eq!(extract_log_lines(response), vec!["a", "b"]);
        assert!(extract_log_lines("none").is_empty());
    }

    #[test]
    fn extract_block_dispatches() {
        assert_eq!(
            extract_block("```\nx\n```", BlockKind::Code).unwrap(),
            Extracted::Text("x".to_string())
        );
        assert_eq!(
            extract_block("VERDICT: accept", BlockKind::Verdict).unwrap(),
            Extracted::Verdict(PlanVerdict::Accept)
        );
    }
}
