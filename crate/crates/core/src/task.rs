//! Tasks, I/O examples, candidate programs, and test verdicts.
//!
//! Datasets are newline-delimited JSON records in one of two built-in
//! schemas (see [`Schema`]); each record becomes a [`Task`]. Candidate
//! [`Program`]s are judged against examples by running them through the
//! executor and comparing outputs under the example's comparison mode.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::exec::{ExecError, ExecStatus, ExecutionResult, Executor, ResourceLimits};
use crate::math::clamp01;
use crate::Real;

/// Tag prefix that selects the interpreter for a task's programs.
pub const LANG_TAG_PREFIX: &str = "lang:";

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("record is not valid JSON: {0}")]
    BadJson(#[from] serde_json::Error),
    #[error("{schema} record is missing required field `{field}`")]
    MissingField { schema: Schema, field: &'static str },
    #[error("field `{field}` has the wrong type, expected {expected}")]
    FieldType {
        field: String,
        expected: &'static str,
    },
    #[error("unknown dataset schema `{0}`")]
    UnknownSchema(String),
    #[error("unknown comparison mode `{0}`")]
    UnknownMode(String),
    #[error("numeric-tolerance mode requires epsilon > 0")]
    BadEpsilon,
    #[error("task `{0}` has no hidden tests")]
    EmptyHiddenTests(String),
    #[error("task `{0}` repeats a (input, output) pair across visible and hidden tests")]
    HiddenOverlapsVisible(String),
    #[error("task `{0}` complexity {1} is outside [0, 1]")]
    ComplexityRange(String, Real),
    #[error("program revision {revision} must carry a parent exactly when > 0")]
    BadLineage { revision: u32 },
}

/// Built-in dataset schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    /// Fields: `task_id`, `prompt`, `entry_point`, `tests`, `visible_examples`.
    Humaneval,
    /// Fields: `id`, `statement`, `visible`, `hidden`, `tags`.
    Generic,
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schema::Humaneval => write!(f, "humaneval"),
            Schema::Generic => write!(f, "generic"),
        }
    }
}

impl FromStr for Schema {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "humaneval" | "humaneval-style" => Ok(Schema::Humaneval),
            "generic" => Ok(Schema::Generic),
            other => Err(TaskError::UnknownSchema(other.to_string())),
        }
    }
}

/// How an actual output is compared against the expected output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonMode {
    /// Byte equality after stripping trailing newlines.
    Exact,
    /// Trailing whitespace stripped per line, trailing blank lines dropped.
    #[default]
    WhitespaceNormalized,
    /// Whitespace-split tokens; numeric tokens compare within `epsilon`.
    NumericTolerance { epsilon: Real },
}

/// One input/expected-output pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IOExample {
    #[serde(default)]
    pub input: String,
    pub expected_output: String,
    #[serde(default)]
    pub comparison_mode: ComparisonMode,
}

impl IOExample {
    pub fn new(input: impl Into<String>, expected: impl Into<String>) -> Self {
        IOExample {
            input: input.into(),
            expected_output: expected.into(),
            comparison_mode: ComparisonMode::default(),
        }
    }

    /// Does `actual` match the expected output under this example's mode?
    pub fn matches(&self, actual: &str) -> bool {
        match &self.comparison_mode {
            ComparisonMode::Exact => {
                strip_trailing_newlines(actual) == strip_trailing_newlines(&self.expected_output)
            }
            ComparisonMode::WhitespaceNormalized => {
                normalize_whitespace(actual) == normalize_whitespace(&self.expected_output)
            }
            ComparisonMode::NumericTolerance { epsilon } => {
                tokens_match_numeric(&self.expected_output, actual, *epsilon)
            }
        }
    }
}

fn strip_trailing_newlines(s: &str) -> &str {
    s.trim_end_matches(['\n', '\r'])
}

fn normalize_whitespace(s: &str) -> String {
    let mut lines: Vec<&str> = s.lines().map(|l| l.trim_end()).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

fn tokens_match_numeric(expected: &str, actual: &str, epsilon: Real) -> bool {
    let ex: Vec<&str> = expected.split_whitespace().collect();
    let ac: Vec<&str> = actual.split_whitespace().collect();
    if ex.len() != ac.len() {
        return false;
    }
    ex.iter()
        .zip(&ac)
        .all(|(e, a)| match (e.parse::<Real>(), a.parse::<Real>()) {
            (Ok(x), Ok(y)) => (x - y).abs() <= epsilon,
            _ => e == a,
        })
}

/// One programming problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub statement: String,
    pub visible_examples: Vec<IOExample>,
    pub hidden_tests: Vec<IOExample>,
    pub entry_point: Option<String>,
    pub tags: Vec<String>,
    pub complexity: Real,
}

impl Task {
    /// Interpreter id for this task: a `lang:<id>` tag wins, else `default`.
    pub fn language_tag(&self, default: &str) -> String {
        self.tags
            .iter()
            .find_map(|t| t.strip_prefix(LANG_TAG_PREFIX))
            .unwrap_or(default)
            .to_string()
    }

    /// Checks the structural invariants shared by both schemas.
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.hidden_tests.is_empty() {
            return Err(TaskError::EmptyHiddenTests(self.id.clone()));
        }
        if !(0.0..=1.0).contains(&self.complexity) {
            return Err(TaskError::ComplexityRange(self.id.clone(), self.complexity));
        }
        let visible: BTreeSet<(&str, &str)> = self
            .visible_examples
            .iter()
            .map(|e| (e.input.as_str(), e.expected_output.as_str()))
            .collect();
        for h in &self.hidden_tests {
            if visible.contains(&(h.input.as_str(), h.expected_output.as_str())) {
                return Err(TaskError::HiddenOverlapsVisible(self.id.clone()));
            }
        }
        Ok(())
    }
}

/// Which stage of the workflow produced a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProducedBy {
    Level1,
    Level2,
    Debug,
    DebateRefine,
}

/// A candidate solution with revision lineage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Program {
    pub source: String,
    pub language_tag: String,
    pub revision: u32,
    pub produced_by: ProducedBy,
    pub parent_revision: Option<u32>,
}

impl Program {
    /// Revision 0, no parent.
    pub fn initial(source: impl Into<String>, language: impl Into<String>, by: ProducedBy) -> Self {
        Program {
            source: source.into(),
            language_tag: language.into(),
            revision: 0,
            produced_by: by,
            parent_revision: None,
        }
    }

    /// A child revision of `self` with new source.
    pub fn revise(&self, source: impl Into<String>, revision: u32, by: ProducedBy) -> Self {
        Program {
            source: source.into(),
            language_tag: self.language_tag.clone(),
            revision,
            produced_by: by,
            parent_revision: Some(self.revision),
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let ok = (self.revision == 0) == self.parent_revision.is_none()
            && self.parent_revision.is_none_or(|p| p < self.revision);
        if ok {
            Ok(())
        } else {
            Err(TaskError::BadLineage {
                revision: self.revision,
            })
        }
    }
}

/// Per-example verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    WrongOutput,
    RuntimeError,
    Timeout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleResult {
    pub index: usize,
    pub verdict: Verdict,
    pub actual_output: String,
    pub stderr: String,
}

/// Evidence for the pass/fail decision over a list of examples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub per_example: Vec<ExampleResult>,
    pub all_passed: bool,
    pub wall_time_ms: u64,
}

impl TestReport {
    pub fn from_results(per_example: Vec<ExampleResult>, wall_time_ms: u64) -> Self {
        let all_passed = per_example.iter().all(|r| r.verdict == Verdict::Pass);
        TestReport {
            per_example,
            all_passed,
            wall_time_ms,
        }
    }

    /// Index of the first non-passing example, if any.
    pub fn first_failure(&self) -> Option<&ExampleResult> {
        self.per_example.iter().find(|r| r.verdict != Verdict::Pass)
    }

    /// Short human-readable digest used in debugging prompts.
    pub fn summary(&self) -> String {
        if self.all_passed {
            return "all examples passed".to_string();
        }
        let mut out = String::new();
        for r in self
            .per_example
            .iter()
            .filter(|r| r.verdict != Verdict::Pass)
        {
            let verdict = match r.verdict {
                Verdict::Pass => "pass",
                Verdict::WrongOutput => "wrong output",
                Verdict::RuntimeError => "runtime error",
                Verdict::Timeout => "timeout",
            };
            out.push_str(&format!(
                "example {}: {} (got: {:?}, stderr: {:?})\n",
                r.index,
                verdict,
                truncate(&r.actual_output, 200),
                truncate(&r.stderr, 200)
            ));
        }
        out
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let cut = s
            .char_indices()
            .take_while(|(i, _)| *i < max)
            .last()
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        format!("{}…", &s[..cut])
    }
}

/// Derive a verdict from an execution result and the example's mode.
pub fn judge_execution(example: &IOExample, result: &ExecutionResult) -> (Verdict, String) {
    let actual = result.stdout.clone();
    let verdict = match result.status {
        ExecStatus::Ok => {
            if example.matches(&result.stdout) {
                Verdict::Pass
            } else {
                Verdict::WrongOutput
            }
        }
        ExecStatus::NonzeroExit(_) | ExecStatus::SpawnFailure => Verdict::RuntimeError,
        ExecStatus::Timeout => Verdict::Timeout,
        // Truncated output cannot be trusted to match anything.
        ExecStatus::OutputLimit => Verdict::WrongOutput,
    };
    (verdict, actual)
}

/// Options controlling dataset ingestion.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// When a record has no visible examples, promote one hidden test into
    /// the visible set (and remove it from evaluation).
    pub promote_visible: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            promote_visible: true,
        }
    }
}

/// Parse one newline-delimited dataset record into a [`Task`].
///
/// Unknown fields are ignored. `rng` is only consulted for visible-example
/// promotion, so a seeded generator makes ingestion reproducible.
pub fn parse_task<R: Rng + ?Sized>(
    record: &str,
    schema: Schema,
    opts: &ParseOptions,
    rng: &mut R,
) -> Result<Task, TaskError> {
    let value: Value = serde_json::from_str(record)?;
    let obj = value.as_object().ok_or(TaskError::FieldType {
        field: "<record>".to_string(),
        expected: "JSON object",
    })?;

    let mut task = match schema {
        Schema::Humaneval => Task {
            id: req_str(obj, schema, "task_id")?,
            statement: req_str(obj, schema, "prompt")?,
            visible_examples: opt_examples(obj, "visible_examples")?,
            hidden_tests: req_examples(obj, schema, "tests")?,
            entry_point: opt_str(obj, "entry_point")?,
            tags: opt_tags(obj)?,
            complexity: f64::NAN,
        },
        Schema::Generic => Task {
            id: req_str(obj, schema, "id")?,
            statement: req_str(obj, schema, "statement")?,
            visible_examples: opt_examples(obj, "visible")?,
            hidden_tests: req_examples(obj, schema, "hidden")?,
            entry_point: opt_str(obj, "entry_point")?,
            tags: opt_tags(obj)?,
            complexity: f64::NAN,
        },
    };

    if task.hidden_tests.is_empty() {
        return Err(TaskError::EmptyHiddenTests(task.id));
    }
    if opts.promote_visible && task.visible_examples.is_empty() {
        let pick = rng.gen_range(0..task.hidden_tests.len());
        let promoted = task.hidden_tests.remove(pick);
        task.visible_examples.push(promoted);
    }

    task.complexity = match obj.get("complexity") {
        Some(v) => v.as_f64().ok_or(TaskError::FieldType {
            field: "complexity".to_string(),
            expected: "number",
        })?,
        None => estimate_complexity(&task),
    };

    task.validate()?;
    Ok(task)
}

/// Deterministic complexity score in `[0, 1]`.
///
/// `0.5 * min(len/2000, 1) + 0.3 * min(|S|/5, 1) + 0.2 * tag_bonus`, where
/// the bonus fires on a `competition`, `interview`, or `hard` tag. Monotone
/// in statement length and visible-example count, saturating at 1.
pub fn estimate_complexity(task: &Task) -> Real {
    let len = task.statement.chars().count() as Real;
    let n_examples = task.visible_examples.len() as Real;
    let tag_bonus = if task
        .tags
        .iter()
        .any(|t| matches!(t.as_str(), "competition" | "interview" | "hard"))
    {
        1.0
    } else {
        0.0
    };
    clamp01(0.5 * (len / 2000.0).min(1.0) + 0.3 * (n_examples / 5.0).min(1.0) + 0.2 * tag_bonus)
}

/// Run `program` on every example and fold the verdicts into a report.
///
/// Candidate misbehavior (wrong output, crashes, timeouts) becomes a
/// verdict; only executor-infrastructure failure is an error.
pub fn run_tests(
    program: &Program,
    examples: &[IOExample],
    executor: &Executor,
    limits: &ResourceLimits,
) -> Result<TestReport, ExecError> {
    let (report, _) = executor.run_examples(program, examples, limits)?;
    Ok(report)
}

fn req_str(
    obj: &serde_json::Map<String, Value>,
    schema: Schema,
    field: &'static str,
) -> Result<String, TaskError> {
    match obj.get(field) {
        None => Err(TaskError::MissingField { schema, field }),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(TaskError::FieldType {
            field: field.to_string(),
            expected: "string",
        }),
    }
}

fn opt_str(
    obj: &serde_json::Map<String, Value>,
    field: &'static str,
) -> Result<Option<String>, TaskError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(TaskError::FieldType {
            field: field.to_string(),
            expected: "string",
        }),
    }
}

fn opt_tags(obj: &serde_json::Map<String, Value>) -> Result<Vec<String>, TaskError> {
    match obj.get("tags") {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str().map(str::to_string).ok_or(TaskError::FieldType {
                    field: "tags".to_string(),
                    expected: "array of strings",
                })
            })
            .collect(),
        Some(_) => Err(TaskError::FieldType {
            field: "tags".to_string(),
            expected: "array of strings",
        }),
    }
}

fn req_examples(
    obj: &serde_json::Map<String, Value>,
    schema: Schema,
    field: &'static str,
) -> Result<Vec<IOExample>, TaskError> {
    match obj.get(field) {
        None => Err(TaskError::MissingField { schema, field }),
        Some(v) => parse_examples(v, field),
    }
}

fn opt_examples(
    obj: &serde_json::Map<String, Value>,
    field: &'static str,
) -> Result<Vec<IOExample>, TaskError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(v) => parse_examples(v, field),
    }
}

fn parse_examples(value: &Value, field: &str) -> Result<Vec<IOExample>, TaskError> {
    let items = value.as_array().ok_or(TaskError::FieldType {
        field: field.to_string(),
        expected: "array of examples",
    })?;
    items.iter().map(|v| parse_example(v, field)).collect()
}

fn parse_example(value: &Value, field: &str) -> Result<IOExample, TaskError> {
    let obj = value.as_object().ok_or(TaskError::FieldType {
        field: field.to_string(),
        expected: "example object",
    })?;
    let input = match obj.get("input") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(TaskError::FieldType {
                field: format!("{field}.input"),
                expected: "string",
            })
        }
    };
    let expected_output = match obj.get("output") {
        Some(Value::String(s)) => s.clone(),
        _ => {
            return Err(TaskError::FieldType {
                field: format!("{field}.output"),
                expected: "string",
            })
        }
    };
    let comparison_mode = match obj.get("mode").and_then(Value::as_str) {
        None => ComparisonMode::default(),
        Some("exact") => ComparisonMode::Exact,
        Some("whitespace") | Some("whitespace-normalized") => ComparisonMode::WhitespaceNormalized,
        Some("numeric") | Some("numeric-tolerance") => {
            let epsilon = obj.get("epsilon").and_then(Value::as_f64).unwrap_or(0.0);
            if epsilon <= 0.0 {
                return Err(TaskError::BadEpsilon);
            }
            ComparisonMode::NumericTolerance { epsilon }
        }
        Some(other) => return Err(TaskError::UnknownMode(other.to_string())),
    };
    Ok(IOExample {
        input,
        expected_output,
        comparison_mode,
    })
}
