//! Execution-trace instrumentation, similarity, and level transitions.
//!
//! The similarity between consecutive traces is one minus the normalized
//! event-level edit distance; a debug loop escalates when that similarity
//! strictly exceeds the adaptive threshold
//! `delta0 * exp(-lambda * (t/t_max) * complexity)`. Instrumentation itself
//! is delegated to the embed-trace agent and guarded by an output re-check,
//! since model-rewritten programs are not trusted to preserve behavior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{ExecError, ExecutionResult, Executor, ResourceLimits, TRACE_PREFIX};
use crate::gateway::{extract, AgentRole, Gateway, GatewayError, TokenUsage};
use crate::math::{decay_threshold, normalized_edit_similarity};
use crate::task::{Program, Task, TestReport};
use crate::Real;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("iteration {t} outside [1, {t_max}]")]
    IterationRange { t: u32, t_max: u32 },
    #[error("complexity {0} outside [0, 1]")]
    ComplexityRange(Real),
    #[error("invalid transition params: {0}")]
    BadParams(String),
}

/// One logged variable state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub line_no: u32,
    pub var_name: String,
    pub value_repr: String,
}

/// An ordered sequence of trace events from one execution.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub source_revision: u32,
    /// Grammar-prefixed lines that failed to parse.
    pub skipped: usize,
}

impl Trace {
    pub fn empty(source_revision: u32) -> Self {
        Trace {
            events: Vec::new(),
            source_revision,
            skipped: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One event per line, for prompt embedding.
    pub fn render(&self) -> String {
        if self.events.is_empty() {
            return "(no trace events)".to_string();
        }
        self.events
            .iter()
            .map(|e| format!("line {}: {} = {}", e.line_no, e.var_name, e.value_repr))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Threshold schedule for the stagnation check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionParams {
    pub delta0: Real,
    pub lambda: Real,
    pub t_max: u32,
}

impl Default for TransitionParams {
    fn default() -> Self {
        TransitionParams {
            delta0: 0.85,
            lambda: 0.5,
            t_max: 4,
        }
    }
}

impl TransitionParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        if !(self.delta0 > 0.0 && self.delta0 <= 1.0) {
            return Err(TraceError::BadParams(format!(
                "delta0 {} outside (0, 1]",
                self.delta0
            )));
        }
        if self.lambda < 0.0 {
            return Err(TraceError::BadParams(format!("lambda {} < 0", self.lambda)));
        }
        if self.t_max < 1 {
            return Err(TraceError::BadParams("t_max < 1".to_string()));
        }
        Ok(())
    }
}

/// Outcome of [`instrument`]: the program to trace with, whether the
/// agent's rewrite was rejected, and the embed-trace exchange's tokens.
#[derive(Debug, Clone)]
pub struct Instrumented {
    pub program: Program,
    pub fallback: bool,
    pub usage: TokenUsage,
}

/// Ask the embed-trace agent for an instrumented variant of `program` and
/// validate it by re-running the visible examples.
///
/// `baseline` must be the report of `program` itself on
/// `task.visible_examples`; if the instrumented variant's stdout differs on
/// any example, or no code block can be extracted, the original program is
/// returned with `fallback = true` (its runs then parse to empty traces).
/// The instrumented variant keeps the original's revision number: it is the
/// same candidate, observed.
pub fn instrument(
    program: &Program,
    task: &Task,
    baseline: &TestReport,
    gateway: &Gateway,
    executor: &Executor,
    limits: &ResourceLimits,
) -> Result<Instrumented, TraceError> {
    let context = BTreeMap::from([
        ("language".to_string(), program.language_tag.clone()),
        ("source".to_string(), program.source.clone()),
    ]);
    let exchange = gateway.complete(AgentRole::EmbedTrace, &context)?;
    let usage = exchange.usage;
    let source = match extract::extract_code(&exchange.response) {
        Ok(source) => source,
        Err(err) => {
            log::warn!("embed-trace reply had no code block, falling back: {err}");
            return Ok(Instrumented {
                program: program.clone(),
                fallback: true,
                usage,
            });
        }
    };

    let candidate = Program {
        source,
        ..program.clone()
    };
    for (i, example) in task.visible_examples.iter().enumerate() {
        let result = executor.run(&candidate, &example.input, limits)?;
        let expected = baseline
            .per_example
            .get(i)
            .map(|r| r.actual_output.as_str())
            .unwrap_or_default();
        if result.stdout != expected {
            log::warn!("instrumented stdout diverged on example {i}, falling back to the original");
            return Ok(Instrumented {
                program: program.clone(),
                fallback: true,
                usage,
            });
        }
    }
    Ok(Instrumented {
        program: candidate,
        fallback: false,
        usage,
    })
}

/// Parse the trace-grammar lines of one execution into a [`Trace`].
/// Lenient: malformed grammar-prefixed lines are counted, never fatal.
pub fn parse_trace(result: &ExecutionResult, revision: u32) -> Trace {
    let mut events = Vec::new();
    let mut skipped = 0;
    for line in &result.trace_lines {
        match parse_event(line) {
            Some(event) => events.push(event),
            None => skipped += 1,
        }
    }
    Trace {
        events,
        source_revision: revision,
        skipped,
    }
}

fn parse_event(line: &str) -> Option<TraceEvent> {
    let rest = line.strip_prefix(TRACE_PREFIX)?;
    let (line_part, assign) = rest.split_once('|')?;
    let line_no: u32 = line_part.strip_prefix("line=")?.parse().ok()?;
    if line_no < 1 {
        return None;
    }
    let (name, value) = assign.split_once('=')?;
    if !is_identifier(name) {
        return None;
    }
    Some(TraceEvent {
        line_no,
        var_name: name.to_string(),
        value_repr: unescape(value),
    })
}

fn is_identifier(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// `\p` encodes `|`, `\n` encodes a newline; other sequences pass through.
fn unescape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('p') => out.push('|'),
            Some('n') => out.push('\n'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Similarity of two traces: `1 - EditDist / max(|a|, |b|)` over whole
/// events. Both empty compares as 1 (the same degenerate behavior); exactly
/// one empty as 0.
pub fn similarity(a: &Trace, b: &Trace) -> Real {
    normalized_edit_similarity(&a.events, &b.events)
}

/// The adaptive threshold at debug iteration `t` (1-based).
pub fn threshold(t: u32, params: &TransitionParams, complexity: Real) -> Result<Real, TraceError> {
    params.validate()?;
    if t < 1 || t > params.t_max {
        return Err(TraceError::IterationRange {
            t,
            t_max: params.t_max,
        });
    }
    if !(0.0..=1.0).contains(&complexity) {
        return Err(TraceError::ComplexityRange(complexity));
    }
    Ok(decay_threshold(
        params.delta0,
        params.lambda,
        t,
        params.t_max,
        complexity,
    ))
}

/// Stagnation predicate: true iff the current trace is strictly more
/// similar to the previous one than the iteration's threshold allows.
///
/// The first iteration (no previous trace) never transitions. `t` beyond
/// `t_max` is clamped so deep debug loops keep the terminal threshold; this
/// keeps the predicate total, matching its no-errors contract.
pub fn should_transition(
    t_cur: &Trace,
    t_prev: Option<&Trace>,
    t: u32,
    params: &TransitionParams,
    complexity: Real,
) -> bool {
    let Some(prev) = t_prev else {
        return false;
    };
    let t = t.clamp(1, params.t_max.max(1));
    let delta = match threshold(t, params, complexity.clamp(0.0, 1.0)) {
        Ok(delta) => delta,
        Err(_) => return false,
    };
    similarity(t_cur, prev) > delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::ExecStatus;

    fn event(line_no: u32, name: &str, value: &str) -> TraceEvent {
        TraceEvent {
            line_no,
            var_name: name.to_string(),
            value_repr: value.to_string(),
        }
    }

    fn trace_of(names: &[&str]) -> Trace {
        Trace {
            events: names.iter().map(|n| event(1, n, "0")).collect(),
            source_revision: 0,
            skipped: 0,
        }
    }

    fn result_with_trace(lines: &[&str]) -> ExecutionResult {
        ExecutionResult {
            stdout: String::new(),
            stdout_truncated: false,
            stderr: lines.join("\n"),
            status: ExecStatus::Ok,
            wall_time_ms: 1,
            trace_lines: lines.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn parses_valid_lines_and_counts_malformed() {
        let result = result_with_trace(&[
            "SEMAG_TRACE|line=1|x=10",
            "SEMAG_TRACE|line=oops|y=2",
            "SEMAG_TRACE|line=3|total=55",
        ]);
        let trace = parse_trace(&result, 7);
        assert_eq!(trace.events.len(), 2);
        assert_eq!(trace.skipped, 1);
        assert_eq!(trace.source_revision, 7);
        assert_eq!(trace.events[0], event(1, "x", "10"));
        assert_eq!(trace.events[1], event(3, "total", "55"));
    }

    #[test]
    fn rejects_bad_identifiers_and_line_zero() {
        let result = result_with_trace(&[
            "SEMAG_TRACE|line=0|x=1",
            "SEMAG_TRACE|line=2|9lives=1",
            "SEMAG_TRACE|line=2|=1",
            "SEMAG_TRACE|line=2",
        ]);
        let trace = parse_trace(&result, 0);
        assert!(trace.events.is_empty());
        assert_eq!(trace.skipped, 4);
    }

    #[test]
    fn unescapes_pipe_and_newline() {
        let result = result_with_trace(&[r"SEMAG_TRACE|line=4|s=a\pb\nc"]);
        let trace = parse_trace(&result, 0);
        assert_eq!(trace.events[0].value_repr, "a|b\nc");
    }

    #[test]
    fn value_may_contain_equals_sign() {
        let result = result_with_trace(&["SEMAG_TRACE|line=1|expr=a=b"]);
        let trace = parse_trace(&result, 0);
        assert_eq!(trace.events[0].var_name, "expr");
        assert_eq!(trace.events[0].value_repr, "a=b");
    }

    #[test]
    fn similarity_conventions() {
        let empty = Trace::empty(0);
        assert_eq!(similarity(&empty, &Trace::empty(1)), 1.0);
        assert_eq!(similarity(&empty, &trace_of(&["a"])), 0.0);
        assert_eq!(similarity(&trace_of(&["a"]), &empty), 0.0);
        let t = trace_of(&["a", "b", "c"]);
        assert_eq!(similarity(&t, &t), 1.0);
    }

    #[test]
    fn similarity_matches_hand_derived_values() {
        let abc = trace_of(&["a", "b", "c"]);
        let abd = trace_of(&["a", "b", "d"]);
        let got = similarity(&abc, &abd);
        assert!((got - 2.0 / 3.0).abs() < 1e-12, "got {got}");

        let left = trace_of(&["a", "b", "c", "d"]);
        let right = trace_of(&["w", "x", "y", "z"]);
        assert_eq!(similarity(&left, &right), 0.0);
    }

    #[test]
    fn events_compare_on_all_three_fields() {
        let a = Trace {
            events: vec![event(1, "x", "1")],
            source_revision: 0,
            skipped: 0,
        };
        let b = Trace {
            events: vec![event(1, "x", "2")],
            source_revision: 0,
            skipped: 0,
        };
        assert_eq!(similarity(&a, &b), 0.0);
    }

    #[test]
    fn threshold_closed_form() {
        let params = TransitionParams::default();
        // complexity 0 keeps the threshold at delta0 for every t.
        for t in 1..=4 {
            assert_eq!(threshold(t, &params, 0.0).unwrap(), 0.85);
        }
        let terminal = threshold(4, &params, 1.0).unwrap();
        assert!((terminal - 0.85 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((terminal - 0.515_551_060_755_738_4).abs() < 1e-12);
        let halfway = threshold(2, &params, 1.0).unwrap();
        assert!((halfway - 0.661_980_665_610_694_2).abs() < 1e-12);
    }

    #[test]
    fn threshold_rejects_out_of_range_inputs() {
        let params = TransitionParams::default();
        assert!(matches!(
            threshold(0, &params, 0.5),
            Err(TraceError::IterationRange { .. })
        ));
        assert!(matches!(
            threshold(5, &params, 0.5),
            Err(TraceError::IterationRange { .. })
        ));
        assert!(matches!(
            threshold(1, &params, 1.5),
            Err(TraceError::ComplexityRange(_))
        ));
        let bad = TransitionParams {
            delta0: 0.0,
            ..TransitionParams::default()
        };
        assert!(matches!(
            threshold(1, &bad, 0.5),
            Err(TraceError::BadParams(_))
        ));
    }

    #[test]
    fn first_iteration_never_transitions() {
        let params = TransitionParams::default();
        assert!(!should_transition(&trace_of(&["a"]), None, 1, &params, 1.0));
        assert!(!should_transition(&Trace::empty(0), None, 1, &params, 1.0));
    }

    #[test]
    fn identical_traces_stagnate_whenever_delta_below_one() {
        let params = TransitionParams::default();
        let t = trace_of(&["a", "b"]);
        assert!(should_transition(&t, Some(&t.clone()), 1, &params, 0.5));
        // Both-empty similarity is 1, so repeated instant crashes stagnate too.
        assert!(should_transition(
            &Trace::empty(1),
            Some(&Trace::empty(0)),
            2,
            &params,
            0.5
        ));
    }

    #[test]
    fn similarity_below_threshold_does_not_transition() {
        // similarity 0.60 against delta(2, complexity 1) = 0.6620.
        let params = TransitionParams::default();
        let a = trace_of(&["a", "b", "c", "d", "e"]);
        let b = trace_of(&["a", "b", "c", "x", "y"]);
        assert_eq!(similarity(&a, &b), 0.6);
        assert!(!should_transition(&a, Some(&b), 2, &params, 1.0));
        // The terminal threshold 0.5156 is lower, so the same pair stagnates.
        assert!(should_transition(&a, Some(&b), 4, &params, 1.0));
    }

    #[test]
    fn deep_iterations_clamp_to_terminal_threshold() {
        let params = TransitionParams::default();
        let a = trace_of(&["a", "b", "c", "d", "e"]);
        let b = trace_of(&["a", "b", "c", "x", "y"]);
        assert_eq!(
            should_transition(&a, Some(&b), 9, &params, 1.0),
            should_transition(&a, Some(&b), 4, &params, 1.0)
        );
    }

    #[test]
    fn monotone_stagnation_in_edit_distance() {
        // A strictly farther previous trace can only lower similarity, so a
        // false predicate stays false.
        let params = TransitionParams::default();
        let cur = trace_of(&["a", "b", "c", "d"]);
        let near = trace_of(&["a", "b", "c", "x"]);
        let far = trace_of(&["w", "x", "y", "z"]);
        for t in 1..=4 {
            for complexity in [0.0, 0.3, 1.0] {
                if !should_transition(&cur, Some(&near), t, &params, complexity) {
                    assert!(!should_transition(&cur, Some(&far), t, &params, complexity));
                }
            }
        }
    }

    #[test]
    fn render_is_compact() {
        let t = Trace {
            events: vec![event(3, "x", "41")],
            source_revision: 0,
            skipped: 0,
        };
        assert_eq!(t.render(), "line 3: x = 41");
        assert_eq!(Trace::empty(0).render(), "(no trace events)");
    }
}
