//! Deterministic scripted fixtures: per-level solve scenarios, replayable
//! benchmark distributions, and an offline model-selection corpus.
//!
//! Scenario scripts assume the default loop budgets (`m_plan` 3, `m_try` 5,
//! `m_debug` 4, `n_debater` 3); other budgets leave queues over- or
//! under-filled and the run falls into the quarantine path.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::evolve::{BackendProvider, EvolveError, FixtureSearchClient, Registry, RegistryEntry};
use crate::gateway::mock::{MockBackend, MockScript};
use crate::gateway::{AgentRole, BackendDescriptor, Gateway, RetryPolicy};
use crate::harness::BackendSource;
use crate::task::{estimate_complexity, IOExample, Task};

/// Shell task whose only job is to print `token`.
fn sh_task(id: String, statement: String, token: &str) -> Task {
    let mut task = Task {
        id,
        statement,
        visible_examples: vec![IOExample::new("", token)],
        hidden_tests: vec![IOExample::new("ignored", token)],
        entry_point: None,
        tags: vec!["lang:sh".to_string()],
        complexity: 0.0,
    };
    task.complexity = estimate_complexity(&task);
    task
}

pub fn toy_task(label: &str, index: usize) -> Task {
    sh_task(
        format!("{label}-{index}"),
        format!("Emit the token R{index} on standard output."),
        &format!("R{index}"),
    )
}

/// The level at which a scripted scenario lets the task through; `Exhausted`
/// never lets it through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelScenario {
    L1,
    L2,
    L3,
    L4,
    Exhausted,
}

fn fenced(body: &str) -> String {
    format!("```sh\n{body}\n```")
}

/// Script every exchange of one scenario against the default budgets.
///
/// The stagnation route goes through prose embed-trace replies: no code
/// block means fallback, fallback runs parse to empty traces, and two empty
/// traces in a row are maximally similar, which trips the transition check
/// on the second debug iteration.
pub fn scenario_script(task: &Task, scenario: LevelScenario) -> MockScript {
    let token = task
        .visible_examples
        .first()
        .or_else(|| task.hidden_tests.first())
        .map(|e| e.expected_output.as_str())
        .unwrap_or_default();
    let good = fenced(&format!("echo '{token}'"));
    let bad = fenced("echo 'WRONG'");
    let plan = "```plan\n1. Print the required token exactly.\n```";
    let accept = "VERDICT: accept";
    let instrumented = fenced("echo 'WRONG'\necho 'SEMAG_TRACE|line=1|x=1' >&2");
    let prose = "This program resists instrumentation.";
    let explain = "The program prints a constant instead of the required token.";
    let suggest = "Replace the constant with the required token.";
    let debate = "STRATEGY: print the required token\nPARAMS: none\nSCORE: 0.9";
    let directive = "Print exactly the required token.";

    match scenario {
        LevelScenario::L1 => MockScript::new().role(AgentRole::Coder, good),
        LevelScenario::L2 => MockScript::new()
            .role(AgentRole::Coder, bad)
            .role(AgentRole::Planner, plan)
            .role(AgentRole::PlanVerifier, accept)
            .role(AgentRole::Coder, good),
        LevelScenario::L3 => MockScript::new()
            .role(AgentRole::Coder, bad.clone())
            .role(AgentRole::Planner, plan)
            .role(AgentRole::PlanVerifier, accept)
            .role(AgentRole::Coder, bad)
            .role(AgentRole::EmbedTrace, instrumented)
            .role(AgentRole::Explainer, explain)
            .role(AgentRole::Suggestor, suggest)
            .role(AgentRole::Debugger, good),
        LevelScenario::L4 => {
            let mut script = MockScript::new()
                .role(AgentRole::Coder, bad.clone())
                .role(AgentRole::Planner, plan)
                .role(AgentRole::PlanVerifier, accept)
                .role(AgentRole::Coder, bad.clone());
            for _ in 0..2 {
                script = script
                    .role(AgentRole::EmbedTrace, prose)
                    .role(AgentRole::Explainer, explain)
                    .role(AgentRole::Suggestor, suggest)
                    .role(AgentRole::Debugger, bad.clone());
            }
            for _ in 0..3 {
                script = script.role(AgentRole::Debater, debate);
            }
            script
                .role(AgentRole::Decider, directive)
                .role(AgentRole::Coder, good)
        }
        LevelScenario::Exhausted => {
            let mut script = MockScript::new()
                .role(AgentRole::Coder, bad.clone())
                .role(AgentRole::Planner, plan)
                .role(AgentRole::PlanVerifier, accept)
                .role(AgentRole::Coder, bad.clone());
            for _ in 0..5 {
                for _ in 0..2 {
                    script = script
                        .role(AgentRole::EmbedTrace, prose)
                        .role(AgentRole::Explainer, explain)
                        .role(AgentRole::Suggestor, suggest)
                        .role(AgentRole::Debugger, bad.clone());
                }
                for _ in 0..3 {
                    script = script.role(AgentRole::Debater, debate);
                }
                script = script
                    .role(AgentRole::Decider, directive)
                    .role(AgentRole::Coder, bad.clone());
            }
            script
        }
    }
}

/// Per-task scripts behind the [`BackendSource`] trait. Tasks without a
/// script get an empty mock, which the runner quarantines.
#[derive(Default)]
pub struct ScenarioBook {
    scripts: BTreeMap<String, MockScript>,
}

impl ScenarioBook {
    pub fn new() -> Self {
        ScenarioBook::default()
    }

    pub fn script(&mut self, task: &Task, scenario: LevelScenario) {
        self.scripts
            .insert(task.id.clone(), scenario_script(task, scenario));
    }
}

impl BackendSource for ScenarioBook {
    fn gateway_for_task(&self, task: &Task) -> Gateway {
        let backend = match self.scripts.get(&task.id) {
            Some(script) => script.build(),
            None => MockScript::new().build(),
        };
        Gateway::new(
            BackendDescriptor::new("scenario-mock", "mock://scenarios"),
            backend,
        )
    }
}

/// A dataset whose per-level solve distribution is `counts` exactly:
/// `counts[k]` tasks scripted to pass at level `k + 1`.
pub fn level_distribution_fixture(counts: [usize; 4], label: &str) -> (Vec<Task>, ScenarioBook) {
    let scenarios = [
        LevelScenario::L1,
        LevelScenario::L2,
        LevelScenario::L3,
        LevelScenario::L4,
    ];
    let mut tasks = Vec::new();
    let mut book = ScenarioBook::new();
    let mut index = 0;
    for (count, scenario) in counts.into_iter().zip(scenarios) {
        for _ in 0..count {
            let task = toy_task(label, index);
            book.script(&task, scenario);
            tasks.push(task);
            index += 1;
        }
    }
    (tasks, book)
}

pub const EVOLVE_PROFILE: &str = "competitive programming code generation";
/// Appears only in the decisive document's page text.
pub const DECISIVE_MARKER: &str = "tops every recent benchmark sweep";
pub const EVOLVE_WINNER: &str = "cetus-coder";

pub fn evolve_registry() -> Registry {
    let entry = |model_id: &str| RegistryEntry {
        model_id: model_id.to_string(),
        endpoint: "mock://models".to_string(),
        auth_env_var: None,
        aliases: Vec::new(),
    };
    Registry::new(vec![
        entry("astra-coder"),
        entry("borel-coder"),
        entry(EVOLVE_WINNER),
    ])
}

/// A 40-document corpus: ranks 1 through 34 are fresh and fully on-profile,
/// the decisive document sits at rank 15, and ranks 35 through 40 are past
/// the recency window. Crawling 10 deep misses the decisive document;
/// 20 deep finds it.
pub fn evolve_corpus_json() -> String {
    let mut docs = Vec::new();
    for i in 0..34 {
        let page_text = (i == 14).then(|| format!("{EVOLVE_WINNER} {DECISIVE_MARKER}."));
        docs.push(serde_json::json!({
            "url": format!("https://example.org/report-{i:02}"),
            "title": "competitive programming",
            "snippet": "code generation",
            "published_age_days": 5,
            "page_text": page_text,
        }));
    }
    for i in 0..6 {
        docs.push(serde_json::json!({
            "url": format!("https://example.org/archive-{i}"),
            "title": "competitive programming",
            "snippet": "code generation",
            "published_age_days": 45,
        }));
    }
    serde_json::json!({ "docs": docs }).to_string()
}

pub fn evolve_search_client() -> FixtureSearchClient {
    FixtureSearchClient::from_json(&evolve_corpus_json()).expect("fixture corpus is valid")
}

/// Responder-driven mock for the whole selection pipeline. Summaries carry
/// a "dominates" verdict only for the decisive document, the selector
/// proposes the winner only on such evidence, and sampled coder calls
/// succeed only on the winner's backbone.
pub fn evolve_backend() -> Arc<MockBackend> {
    let mock = Arc::new(MockBackend::new());
    mock.set_responder(Arc::new(|role, req| {
        let text: String = req
            .messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        match role {
            AgentRole::KeywordGen => Some("competitive\nprogramming\ncode".to_string()),
            AgentRole::Summarizer => Some(if text.contains(DECISIVE_MARKER) {
                format!("Finding: {EVOLVE_WINNER} dominates the recent coding benchmarks.")
            } else {
                "Finding: mixed results across models.".to_string()
            }),
            AgentRole::LlmSelector => Some(if text.contains("dominates") {
                format!("MODEL: {EVOLVE_WINNER}\nRATIONALE: The digest shows it leading every recent benchmark.")
            } else {
                "MODEL: borel-coder\nRATIONALE: No decisive evidence, keeping the steadier baseline."
                    .to_string()
            }),
            AgentRole::Coder => Some(if req.model_id == EVOLVE_WINNER {
                fenced("echo 'OK'")
            } else {
                fenced("echo 'BROKEN'")
            }),
            AgentRole::ModelMatcher => Some("MODEL: none".to_string()),
            _ => None,
        }
    }));
    mock
}

/// Uniform probe set for backbone sampling; only the winner's mock coder
/// prints the expected token.
pub fn probe_tasks(n: usize) -> Vec<Task> {
    (0..n)
        .map(|i| {
            sh_task(
                format!("probe-{i}"),
                "Emit the token OK on standard output.".to_string(),
                "OK",
            )
        })
        .collect()
}

/// Builds per-model gateways over one shared responder mock.
pub struct MockModelProvider {
    pub backend: Arc<MockBackend>,
}

impl BackendProvider for MockModelProvider {
    fn gateway_for(&self, model_id: &str) -> Result<Gateway, EvolveError> {
        Ok(Gateway::new(
            BackendDescriptor::new(model_id, "mock://models"),
            self.backend.clone(),
        )
        .with_retry(RetryPolicy {
            max_attempts: 2,
            base_delay_ms: 1,
        }))
    }
}
