//! Role-specific prompt templates and rendering.
//!
//! Each [`AgentRole`] maps to exactly one template; `{slot}` placeholders
//! in the template must all be supplied by the caller's context map.
//! Rendering is deterministic: identical inputs produce byte-identical
//! messages. [`verify_templates`] enumerates every role at startup and
//! fails fast on a malformed template.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ChatMessage;
use crate::task::IOExample;

/// The agents of the workflow and the selection pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentRole {
    Planner,
    PlanVerifier,
    Coder,
    EmbedTrace,
    Explainer,
    Suggestor,
    Debugger,
    Debater,
    Decider,
    KeywordGen,
    LinkSelector,
    Summarizer,
    LlmSelector,
    LlmDecider,
    ModelMatcher,
}

/// Every role, in declaration order. Used by the startup self-check.
pub const ALL_ROLES: [AgentRole; 15] = [
    AgentRole::Planner,
    AgentRole::PlanVerifier,
    AgentRole::Coder,
    AgentRole::EmbedTrace,
    AgentRole::Explainer,
    AgentRole::Suggestor,
    AgentRole::Debugger,
    AgentRole::Debater,
    AgentRole::Decider,
    AgentRole::KeywordGen,
    AgentRole::LinkSelector,
    AgentRole::Summarizer,
    AgentRole::LlmSelector,
    AgentRole::LlmDecider,
    AgentRole::ModelMatcher,
];

impl AgentRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentRole::Planner => "planner",
            AgentRole::PlanVerifier => "plan-verifier",
            AgentRole::Coder => "coder",
            AgentRole::EmbedTrace => "embed-trace",
            AgentRole::Explainer => "explainer",
            AgentRole::Suggestor => "suggestor",
            AgentRole::Debugger => "debugger",
            AgentRole::Debater => "debater",
            AgentRole::Decider => "decider",
            AgentRole::KeywordGen => "keyword-gen",
            AgentRole::LinkSelector => "link-selector",
            AgentRole::Summarizer => "summarizer",
            AgentRole::LlmSelector => "llm-selector",
            AgentRole::LlmDecider => "llm-decider",
            AgentRole::ModelMatcher => "model-matcher",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_ROLES
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| TemplateError::UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown agent role `{0}`")]
    UnknownRole(String),
    #[error("context for role {role} is missing key(s): {}", keys.join(", "))]
    MissingKeys { role: AgentRole, keys: Vec<String> },
    #[error("template for role {role} is malformed: {reason}")]
    Malformed { role: AgentRole, reason: String },
}

/// System and user message bodies with `{slot}` placeholders.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub system: &'static str,
    pub user: &'static str,
}

/// The single template for `role`.
pub fn template(role: AgentRole) -> PromptTemplate {
    match role {
        AgentRole::Planner => PromptTemplate {
            system: "You are the planning agent of a multi-agent programming system. \
                     Devise a numbered, step-by-step implementation plan for the problem. \
                     Reply with the plan inside a single fenced block tagged `plan` and nothing else.",
            user: "Problem statement:\n{statement}\n\nVisible examples:\n{examples}\n\n\
                   Write the implementation plan as numbered steps.",
        },
        AgentRole::PlanVerifier => PromptTemplate {
            system: "You are the plan verification agent. Hand-simulate the candidate plan on \
                     each visible example and check that it produces the expected output. \
                     Reply with exactly: a line `VERDICT: accept` or `VERDICT: revise`, then a \
                     fenced block tagged `plan` holding the accepted or revised plan, then a \
                     fenced block tagged `log` listing one finding per line.",
            user: "Problem statement:\n{statement}\n\nVisible examples:\n{examples}\n\n\
                   Candidate plan:\n{plan}",
        },
        AgentRole::Coder => PromptTemplate {
            system: "You are the coding agent. Write a complete program that reads from standard \
                     input and writes the answer to standard output. Reply with exactly one \
                     fenced code block containing the full program and nothing else.",
            user: "Target language: {language}\n\nProblem statement:\n{statement}\n\n\
                   Visible examples:\n{examples}\n\nPlan (may be empty):\n{plan}\n\n\
                   Additional guidance (may be empty):\n{guidance}",
        },
        AgentRole::EmbedTrace => PromptTemplate {
            system: "You are the trace instrumentation agent. Insert logging statements into the \
                     program without changing what it writes to standard output. After each \
                     assignment and at each loop-iteration head, emit one line to standard error \
                     of exactly this form: SEMAG_TRACE|line=<line number>|<variable>=<value>, \
                     escaping `|` as \\p and newlines as \\n inside the value. Reply with one \
                     fenced code block containing the full instrumented program.",
            user: "Language: {language}\n\nProgram:\n{source}",
        },
        AgentRole::Explainer => PromptTemplate {
            system: "You are the error explanation agent. Diagnose why the program fails the \
                     reported examples. Reply with a short plain-text diagnosis of the most \
                     likely root cause.",
            user: "Problem statement:\n{statement}\n\nProgram:\n{source}\n\n\
                   Test report:\n{report}",
        },
        AgentRole::Suggestor => PromptTemplate {
            system: "You are the fix suggestion agent. Combine the execution trace, the logs, \
                     and the diagnosis into one concrete, targeted modification of the program. \
                     Reply with the suggested change, either as plain text or inside a fenced \
                     block.",
            user: "Execution trace (one event per line):\n{trace}\n\nLogs:\n{log}\n\n\
                   Diagnosis:\n{explanation}",
        },
        AgentRole::Debugger => PromptTemplate {
            system: "You are the debugging agent. Apply the suggested fix to the program, \
                     keeping unrelated behavior intact. Reply with exactly one fenced code \
                     block containing the full corrected program.",
            user: "Language: {language}\n\nProgram:\n{source}\n\nSuggested fix:\n{suggestion}",
        },
        AgentRole::Debater => PromptTemplate {
            system: "You are debater {index} in a repair debate. Study the problem, the failing \
                     program, its execution trace, and the proposals made so far, then argue for \
                     the most promising repair strategy. Reply with exactly three lines: \
                     `STRATEGY: <one-sentence strategy>`, `PARAMS: <key=value pairs or none>`, \
                     `SCORE: <your confidence in [0,1]>`.",
            user: "Problem statement:\n{statement}\n\nFailing program:\n{source}\n\n\
                   Execution trace:\n{trace}\n\nDiscussion so far:\n{history}",
        },
        AgentRole::Decider => PromptTemplate {
            system: "You are the debate decider. Condense the discussion into one actionable \
                     directive for the coder, centered on the consensus strategy. Reply with a \
                     short imperative directive in plain text.",
            user: "Problem statement:\n{statement}\n\nProposals:\n{proposals}\n\n\
                   Consensus strategy:\n{chosen}",
        },
        AgentRole::KeywordGen => PromptTemplate {
            system: "You are the keyword generation agent of a model-selection pipeline. \
                     Produce between three and eight short search keywords for finding recent \
                     evidence about code-generation model quality for the given task profile. \
                     Reply with one keyword per line and nothing else.",
            user: "Task profile:\n{profile}\n\nAdditional context:\n{context}",
        },
        AgentRole::LinkSelector => PromptTemplate {
            system: "You are the link selection agent. From the numbered search results, pick \
                     the entries most likely to contain benchmark evidence for the task profile. \
                     Reply with the chosen entry numbers, one per line.",
            user: "Task profile:\n{profile}\n\nSearch results:\n{links}",
        },
        AgentRole::Summarizer => PromptTemplate {
            system: "You are the summarization agent. Distill the page into the evidence it \
                     offers about code-generation model performance relevant to the task \
                     profile. Reply with a compact plain-text digest that names the models \
                     discussed.",
            user: "Task profile:\n{profile}\n\nPage title: {title}\nPage URL: {url}\n\n\
                   Page text:\n{page_text}",
        },
        AgentRole::LlmSelector => PromptTemplate {
            system: "You are a model selection agent. Using the collected evidence and the \
                     measured sample performance, choose the best backbone model for the task \
                     profile from the registry. Reply with a line `MODEL: <model id>` followed \
                     by a line `RATIONALE: <one sentence>`.",
            user: "Task profile:\n{profile}\n\nRegistry models:\n{models}\n\n\
                   Measured sample performance:\n{performance}\n\nEvidence:\n{evidence}",
        },
        AgentRole::LlmDecider => PromptTemplate {
            system: "You are the selection decider. Summarize the selector proposals and state \
                     which model the weighted vote favors. Reply with a line `MODEL: <model id>` \
                     followed by a line `RATIONALE: <one sentence>`.",
            user: "Selector proposals:\n{proposals}",
        },
        AgentRole::ModelMatcher => PromptTemplate {
            system: "You are the model name matcher. Map the candidate model name onto one of \
                     the registry model ids, tolerating aliases and version suffixes. Reply \
                     with a line `MODEL: <registry model id>`, or `MODEL: none` if no registry \
                     entry plausibly matches.",
            user: "Candidate name: {candidate}\n\nRegistry models:\n{models}",
        },
    }
}

/// Placeholder names appearing in `role`'s template, in first-use order.
pub fn required_keys(role: AgentRole) -> Vec<String> {
    let t = template(role);
    let mut keys = Vec::new();
    for part in [t.system, t.user] {
        scan_placeholders(part, &mut |name| {
            if !keys.iter().any(|k| k == name) {
                keys.push(name.to_string());
            }
        });
    }
    keys
}

/// Render `role`'s template into a system and a user message.
pub fn render(
    role: AgentRole,
    context: &BTreeMap<String, String>,
) -> Result<Vec<ChatMessage>, TemplateError> {
    let missing: Vec<String> = required_keys(role)
        .into_iter()
        .filter(|k| !context.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(TemplateError::MissingKeys {
            role,
            keys: missing,
        });
    }
    let t = template(role);
    Ok(vec![
        ChatMessage::system(substitute(t.system, context)),
        ChatMessage::user(substitute(t.user, context)),
    ])
}

/// Startup self-check: every role renders with its declared slots.
pub fn verify_templates() -> Result<(), TemplateError> {
    for role in ALL_ROLES {
        let t = template(role);
        if t.system.trim().is_empty() || t.user.trim().is_empty() {
            return Err(TemplateError::Malformed {
                role,
                reason: "empty message body".to_string(),
            });
        }
        check_braces(role, t.system)?;
        check_braces(role, t.user)?;
        let context: BTreeMap<String, String> = required_keys(role)
            .into_iter()
            .map(|k| (k, String::from("probe")))
            .collect();
        render(role, &context)?;
    }
    Ok(())
}

/// Render a list of examples for prompt embedding.
pub fn format_examples(examples: &[IOExample]) -> String {
    if examples.is_empty() {
        return "(none)".to_string();
    }
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        let input = if ex.input.is_empty() {
            "(empty)"
        } else {
            &ex.input
        };
        out.push_str(&format!(
            "Example {n}:\nInput:\n{input}\nExpected output:\n{output}\n",
            n = i + 1,
            output = ex.expected_output
        ));
    }
    out
}

fn scan_placeholders(text: &str, found: &mut impl FnMut(&str)) {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = text[i + 1..].find('}') {
                let name = &text[i + 1..i + 1 + end];
                if is_slot_name(name) {
                    found(name);
                    i += end + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
}

fn is_slot_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

fn substitute(text: &str, context: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match tail[1..].find('}') {
            Some(end) => {
                let name = &tail[1..1 + end];
                if let Some(value) = is_slot_name(name).then(|| context.get(name)).flatten() {
                    out.push_str(value);
                } else {
                    out.push_str(&tail[..end + 2]);
                }
                rest = &tail[end + 2..];
            }
            None => {
                out.push_str(tail);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn check_braces(role: AgentRole, text: &str) -> Result<(), TemplateError> {
    let mut depth = 0i32;
    for b in text.bytes() {
        match b {
            b'{' => depth += 1,
            b'}' => depth -= 1,
            _ => {}
        }
        if !(0..=1).contains(&depth) {
            return Err(TemplateError::Malformed {
                role,
                reason: "unbalanced braces".to_string(),
            });
        }
    }
    if depth != 0 {
        return Err(TemplateError::Malformed {
            role,
            reason: "unbalanced braces".to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn all_templates_pass_self_check() {
        verify_templates().expect("self-check");
    }

    #[test]
    fn every_role_round_trips_through_its_name() {
        for role in ALL_ROLES {
            assert_eq!(role.as_str().parse::<AgentRole>().unwrap(), role);
        }
    }

    #[test]
    fn planner_prompt_embeds_statement_verbatim() {
        let statement = "Count the vowels in the input line.";
        let messages = render(
            AgentRole::Planner,
            &ctx(&[
                ("statement", statement),
                ("examples", "Input: a\nOutput: 1"),
            ]),
        )
        .expect("renders");
        assert_eq!(messages.len(), 2);
        assert!(messages[1].text.contains(statement));
        assert!(messages[0].text.to_lowercase().contains("numbered"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let context = ctx(&[("statement", "s"), ("examples", "e")]);
        let a = render(AgentRole::Planner, &context).unwrap();
        let b = render(AgentRole::Planner, &context).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_keys_are_all_listed() {
        let err = render(AgentRole::Coder, &ctx(&[("statement", "s")])).expect_err("fails");
        let msg = err.to_string();
        for key in ["examples", "plan", "guidance", "language"] {
            assert!(msg.contains(key), "missing `{key}` in: {msg}");
        }
    }

    #[test]
    fn debater_prompt_embeds_history_in_order() {
        let history = "Proposal 1: use a map\nProposal 2: sort first";
        let messages = render(
            AgentRole::Debater,
            &ctx(&[
                ("index", "3"),
                ("statement", "s"),
                ("source", "code"),
                ("trace", "t"),
                ("history", history),
            ]),
        )
        .expect("renders");
        let body = &messages[1].text;
        let first = body.find("use a map").expect("first proposal present");
        let second = body.find("sort first").expect("second proposal present");
        assert!(first < second);
    }

    #[test]
    fn context_values_with_braces_are_not_rescanned() {
        let source = "fn main() { let x = {1}; }";
        let messages = render(
            AgentRole::EmbedTrace,
            &ctx(&[("language", "rust"), ("source", source)]),
        )
        .expect("renders");
        assert!(messages[1].text.contains(source));
    }

    #[test]
    fn format_examples_numbers_entries() {
        let examples = vec![IOExample::new("1", "2"), IOExample::new("", "ok")];
        let text = format_examples(&examples);
        assert!(text.contains("Example 1:"));
        assert!(text.contains("Example 2:"));
        assert!(text.contains("(empty)"));
        assert_eq!(format_examples(&[]), "(none)");
    }
}
