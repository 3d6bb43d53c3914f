//! The four-level hierarchical session: direct synthesis, plan-guided
//! synthesis, trace-guided debugging, and debate-driven refinement.
//!
//! A session escalates only when the current candidate fails the visible
//! examples; the debug loop additionally escalates early when consecutive
//! execution traces stagnate. Candidate misbehavior (bad code, failed
//! extraction, crashes) never aborts a session; only infrastructure
//! failures do.

pub mod consensus;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use consensus::{
    consensus, update_performance, ConsensusError, ConsensusWeights, DebateProposal,
};

use crate::exec::{ExecError, Executor, ResourceLimits};
use crate::gateway::extract::{
    extract_code, extract_log_lines, extract_plan, extract_suggestion, extract_verdict,
    labeled_line, PlanVerdict,
};
use crate::gateway::prompt::format_examples;
use crate::gateway::{AgentRole, ChatExchange, Gateway, GatewayError, TokenUsage};
use crate::task::{ProducedBy, Program, Task, TestReport};
use crate::trace::{
    instrument, parse_trace, should_transition, Trace, TraceError, TransitionParams,
};
use crate::Real;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("task `{0}` has no visible examples")]
    NoVisibleExamples(String),
}

/// Loop budgets and consensus temperature.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub m_plan: u32,
    pub m_try: u32,
    pub m_debug: u32,
    pub n_debater: u32,
    pub tau_w: Real,
    /// Samples per candidate evaluation; folded into the outer try loop in
    /// this engine, so any value above 1 changes nothing yet.
    pub k_pass: u32,
    pub transition: TransitionParams,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            m_plan: 3,
            m_try: 5,
            m_debug: 4,
            n_debater: 3,
            tau_w: 1.0,
            k_pass: 1,
            transition: TransitionParams::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        for (name, value) in [
            ("m_plan", self.m_plan),
            ("m_try", self.m_try),
            ("m_debug", self.m_debug),
            ("n_debater", self.n_debater),
            ("k_pass", self.k_pass),
        ] {
            if value < 1 {
                return Err(ControllerError::InvalidConfig(format!(
                    "{name} must be >= 1"
                )));
            }
        }
        if self.tau_w.is_nan() || self.tau_w <= 0.0 {
            return Err(ControllerError::InvalidConfig(format!(
                "tau_w must be positive, got {}",
                self.tau_w
            )));
        }
        self.transition
            .validate()
            .map_err(|e| ControllerError::InvalidConfig(e.to_string()))
    }
}

/// Where a session currently stands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    L1,
    L2,
    L3,
    L4,
    Done,
    Exhausted,
}

/// A solution plan with its verification history.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<String>,
    pub revision: u32,
    pub verified: bool,
    pub logs: Vec<String>,
}

impl Plan {
    fn from_text(text: &str, revision: u32) -> Self {
        Plan {
            steps: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
            revision,
            verified: false,
            logs: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        self.steps.join("\n")
    }
}

/// Loop counters. `plan_iters` and `try_iters` count their own loops;
/// `debug_iters` and `debate_rounds` accumulate across outer tries, bounded
/// by `m_try * m_debug` and `m_try * n_debater`.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Counters {
    pub plan_iters: u32,
    pub try_iters: u32,
    pub debug_iters: u32,
    pub debate_rounds: u32,
}

/// One line of the per-task event log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionEvent {
    pub task_id: String,
    pub event: String,
    pub level: u32,
    pub iter: u32,
    /// Cumulative token ledger total at emission time.
    pub tokens: u64,
}

/// Everything observable about one solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionState {
    pub task_id: String,
    pub level: Level,
    pub plan: Option<Plan>,
    pub program_history: Vec<Program>,
    pub trace_prev: Option<Trace>,
    pub counters: Counters,
    pub token_ledger: TokenUsage,
    /// Snapshot of the shared performance table at session end.
    pub debater_performance: Vec<Real>,
    pub final_level: u32,
    pub events: Vec<SessionEvent>,
}

/// Shared per-run debater performance table (eta), updated under a mutex
/// when a debate outcome lands.
pub struct PerformanceTable {
    table: Mutex<Vec<Real>>,
}

impl PerformanceTable {
    pub fn new(n_debater: usize) -> Self {
        PerformanceTable {
            table: Mutex::new(vec![0.0; n_debater]),
        }
    }

    pub fn snapshot(&self) -> Vec<Real> {
        self.table.lock().unwrap().clone()
    }

    fn reward(&self, debater_index: usize, reward: Real) -> Result<(), ConsensusError> {
        update_performance(&mut self.table.lock().unwrap(), debater_index, reward)
    }
}

/// Borrowed collaborators for running sessions.
pub struct Controller<'a> {
    pub cfg: &'a ControllerConfig,
    pub gateway: &'a Gateway,
    pub executor: &'a Executor,
    pub limits: &'a ResourceLimits,
    pub performance: &'a PerformanceTable,
    pub default_language: &'a str,
}

impl Controller<'_> {
    /// Run the full hierarchy on one task.
    ///
    /// Returns the first program passing the visible examples, or the last
    /// candidate with the session marked exhausted.
    pub fn solve(&self, task: &Task) -> Result<(Program, SessionState), ControllerError> {
        self.cfg.validate()?;
        if task.visible_examples.is_empty() {
            return Err(ControllerError::NoVisibleExamples(task.id.clone()));
        }

        let session = Session {
            ctl: self,
            task,
            language: task.language_tag(self.default_language),
            state: SessionState {
                task_id: task.id.clone(),
                level: Level::L1,
                plan: None,
                program_history: Vec::new(),
                trace_prev: None,
                counters: Counters::default(),
                token_ledger: TokenUsage::default(),
                debater_performance: self.performance.snapshot(),
                final_level: 0,
                events: Vec::new(),
            },
        };
        session.run()
    }
}

struct Session<'a> {
    ctl: &'a Controller<'a>,
    task: &'a Task,
    language: String,
    state: SessionState,
}

enum Outcome {
    Passed,
    Stagnated,
    Exhausted,
}

impl Session<'_> {
    fn run(mut self) -> Result<(Program, SessionState), ControllerError> {
        // Level 1: direct synthesis with empty plan and guidance.
        self.event("level_enter", 1, 0);
        self.state.level = Level::L1;
        let mut program = self.generate(ProducedBy::Level1, "", "")?;
        let mut report = self.test(&program, 1)?;
        if report.all_passed {
            self.seal(1);
            return Ok((program, self.state));
        }

        // Level 2: plan, verify, regenerate.
        self.event("level_enter", 2, 0);
        self.state.level = Level::L2;
        let plan = self.plan_and_verify()?;
        let plan_text = plan.render();
        self.state.plan = Some(plan);
        program = self.generate(ProducedBy::Level2, &plan_text, "")?;
        report = self.test(&program, 2)?;
        if report.all_passed {
            self.seal(2);
            return Ok((program, self.state));
        }

        // Levels 3 and 4 alternate inside the outer try loop.
        let mut last_trace = Trace::empty(program.revision);
        for try_iter in 1..=self.ctl.cfg.m_try {
            self.state.counters.try_iters = try_iter;

            self.event("level_enter", 3, try_iter);
            self.state.level = Level::L3;
            self.state.trace_prev = None;
            let (debugged, outcome) = self.debug_cycle(program, &mut report, &mut last_trace)?;
            program = debugged;
            if matches!(outcome, Outcome::Passed) {
                self.seal(3);
                return Ok((program, self.state));
            }

            self.event("level_enter", 4, try_iter);
            self.state.level = Level::L4;
            let (refined, refined_report) =
                self.debate_and_refine(program, &last_trace, try_iter)?;
            program = refined;
            report = refined_report;
            if report.all_passed {
                self.seal(4);
                return Ok((program, self.state));
            }
        }

        self.event("exhausted", 4, self.ctl.cfg.m_try);
        self.state.level = Level::Exhausted;
        self.state.final_level = 4;
        self.state.debater_performance = self.ctl.performance.snapshot();
        Ok((program, self.state))
    }

    /// One coder exchange; extraction failure yields an empty (and thus
    /// failing) candidate rather than an error.
    fn generate(
        &mut self,
        by: ProducedBy,
        plan: &str,
        guidance: &str,
    ) -> Result<Program, ControllerError> {
        let language = self.language.clone();
        let exchange = self.call(
            AgentRole::Coder,
            &[
                ("language", language.as_str()),
                ("statement", &self.task.statement),
                ("examples", &format_examples(&self.task.visible_examples)),
                ("plan", plan),
                ("guidance", guidance),
            ],
        )?;
        let source = match extract_code(&exchange.response) {
            Ok(source) => source,
            Err(err) => {
                log::warn!("coder reply had no code block, candidate will fail: {err}");
                String::new()
            }
        };
        Ok(self.next_program(source, by))
    }

    fn next_program(&mut self, source: String, by: ProducedBy) -> Program {
        let revision = self.state.program_history.len() as u32;
        let program = Program {
            source,
            language_tag: self.language.clone(),
            revision,
            produced_by: by,
            parent_revision: revision.checked_sub(1),
        };
        self.state.program_history.push(program.clone());
        program
    }

    fn test(&mut self, program: &Program, level: u32) -> Result<TestReport, ControllerError> {
        let report = self.test_quiet(program)?;
        let name = if report.all_passed {
            "test_pass"
        } else {
            "test_fail"
        };
        self.event(name, level, 0);
        Ok(report)
    }

    fn test_quiet(&mut self, program: &Program) -> Result<TestReport, ControllerError> {
        let (report, _) = self.ctl.executor.run_examples(
            program,
            &self.task.visible_examples,
            self.ctl.limits,
        )?;
        Ok(report)
    }

    /// Planner once, then up to `m_plan` verify-refine rounds, stopping
    /// early on an accepting verdict.
    fn plan_and_verify(&mut self) -> Result<Plan, ControllerError> {
        let statement = self.task.statement.clone();
        let examples = format_examples(&self.task.visible_examples);
        let exchange = self.call(
            AgentRole::Planner,
            &[("statement", &statement), ("examples", &examples)],
        )?;
        let text = extract_plan(&exchange.response)
            .unwrap_or_else(|_| exchange.response.trim().to_string());
        let mut plan = Plan::from_text(&text, 0);

        for i in 1..=self.ctl.cfg.m_plan {
            self.state.counters.plan_iters = i;
            self.event("plan_iter", 2, i);
            let rendered = plan.render();
            let exchange = self.call(
                AgentRole::PlanVerifier,
                &[
                    ("statement", &statement),
                    ("examples", &examples),
                    ("plan", &rendered),
                ],
            )?;
            plan.logs.extend(extract_log_lines(&exchange.response));
            let returned = extract_plan(&exchange.response).ok();
            let verdict = extract_verdict(&exchange.response);
            match verdict {
                Ok(PlanVerdict::Accept) => {
                    if let Some(text) = returned {
                        let logs = std::mem::take(&mut plan.logs);
                        plan = Plan::from_text(&text, plan.revision);
                        plan.logs = logs;
                    }
                    plan.verified = !plan.steps.is_empty();
                    self.event("plan_accepted", 2, i);
                    break;
                }
                // An unparseable verdict counts as a revision request.
                Ok(PlanVerdict::Revise) | Err(_) => {
                    if let Some(text) = returned {
                        let logs = std::mem::take(&mut plan.logs);
                        plan = Plan::from_text(&text, plan.revision + 1);
                        plan.logs = logs;
                    }
                }
            }
        }
        Ok(plan)
    }

    /// The inner debug loop: instrument, trace, explain, suggest, patch,
    /// test, then check stagnation. `report` and `last_trace` are updated
    /// in place for the caller.
    fn debug_cycle(
        &mut self,
        mut program: Program,
        report: &mut TestReport,
        last_trace: &mut Trace,
    ) -> Result<(Program, Outcome), ControllerError> {
        for d in 1..=self.ctl.cfg.m_debug {
            self.state.counters.debug_iters += 1;
            self.event("debug_iter", 3, d);

            let instrumented = instrument(
                &program,
                self.task,
                report,
                self.ctl.gateway,
                self.ctl.executor,
                self.ctl.limits,
            )?;
            self.state.token_ledger.add(instrumented.usage);
            let trace = if instrumented.fallback {
                Trace::empty(program.revision)
            } else {
                let failing = report.first_failure().map(|r| r.index).unwrap_or_default();
                let input = &self.task.visible_examples[failing].input;
                let result =
                    self.ctl
                        .executor
                        .run(&instrumented.program, input, self.ctl.limits)?;
                parse_trace(&result, program.revision)
            };

            let explanation = self
                .call(
                    AgentRole::Explainer,
                    &[
                        ("statement", &self.task.statement.clone()),
                        ("source", &program.source.clone()),
                        ("report", &report.summary()),
                    ],
                )?
                .response;

            let logs = self.render_logs(report);
            let suggestion_reply = self
                .call(
                    AgentRole::Suggestor,
                    &[
                        ("trace", &trace.render()),
                        ("log", &logs),
                        ("explanation", &explanation),
                    ],
                )?
                .response;
            let suggestion =
                extract_suggestion(&suggestion_reply).unwrap_or_else(|_| suggestion_reply.clone());

            let debug_reply = self
                .call(
                    AgentRole::Debugger,
                    &[
                        ("language", &self.language.clone()),
                        ("source", &program.source.clone()),
                        ("suggestion", &suggestion),
                    ],
                )?
                .response;
            let source = extract_code(&debug_reply).unwrap_or_default();
            program = self.next_program(source, ProducedBy::Debug);

            *report = self.test(&program, 3)?;
            if report.all_passed {
                *last_trace = trace;
                return Ok((program, Outcome::Passed));
            }

            let stagnated = should_transition(
                &trace,
                self.state.trace_prev.as_ref(),
                d,
                &self.ctl.cfg.transition,
                self.task.complexity,
            );
            self.state.trace_prev = Some(trace.clone());
            *last_trace = trace;
            if stagnated {
                self.event("stagnation", 3, d);
                return Ok((program, Outcome::Stagnated));
            }
        }
        self.event("debug_exhausted", 3, self.ctl.cfg.m_debug);
        Ok((program, Outcome::Exhausted))
    }

    /// Debate, consensus, decider directive, and one refinement attempt.
    fn debate_and_refine(
        &mut self,
        program: Program,
        trace: &Trace,
        try_iter: u32,
    ) -> Result<(Program, TestReport), ControllerError> {
        let mut proposals: Vec<DebateProposal> = Vec::new();
        for j in 1..=self.ctl.cfg.n_debater {
            self.state.counters.debate_rounds += 1;
            self.event("debate_call", 4, j);
            let reply = self
                .call(
                    AgentRole::Debater,
                    &[
                        ("index", &j.to_string()),
                        ("statement", &self.task.statement.clone()),
                        ("source", &program.source.clone()),
                        ("trace", &trace.render()),
                        ("history", &render_proposals(&proposals)),
                    ],
                )?
                .response;
            proposals.push(parse_proposal(&reply, j as usize));
        }

        let performances = self.ctl.performance.snapshot();
        let eta: Vec<Real> = (0..proposals.len())
            .map(|i| performances.get(i).copied().unwrap_or(0.0))
            .collect();
        let (chosen, _weights) = consensus(&proposals, &eta, self.ctl.cfg.tau_w)?;
        self.event("consensus", 4, try_iter);

        let chosen_text = format!(
            "Strategy: {}\nParams: {}",
            chosen.strategy_text, chosen.param_text
        );
        let directive = self
            .call(
                AgentRole::Decider,
                &[
                    ("statement", &self.task.statement.clone()),
                    ("proposals", &render_proposals(&proposals)),
                    ("chosen", &chosen_text),
                ],
            )?
            .response;

        let plan_text = self
            .state
            .plan
            .as_ref()
            .map(Plan::render)
            .unwrap_or_default();
        let program = self.generate(ProducedBy::DebateRefine, &plan_text, &directive)?;
        let report = self.test(&program, 4)?;

        let reward = if report.all_passed { 1.0 } else { 0.0 };
        self.ctl.performance.reward(chosen.debater_index, reward)?;
        Ok((program, report))
    }

    /// Plan-verification and execution logs, labeled for the suggestor.
    fn render_logs(&self, report: &TestReport) -> String {
        let plan_logs = self
            .state
            .plan
            .as_ref()
            .map(|p| p.logs.join("\n"))
            .unwrap_or_default();
        let plan_logs = if plan_logs.is_empty() {
            "(none)".to_string()
        } else {
            plan_logs
        };
        format!(
            "Plan verification log:\n{plan_logs}\nExecution log:\n{}",
            report.summary()
        )
    }

    fn seal(&mut self, level: u32) {
        self.state.level = Level::Done;
        self.state.final_level = level;
        self.state.debater_performance = self.ctl.performance.snapshot();
        self.event("finish", level, 0);
    }

    fn call(
        &mut self,
        role: AgentRole,
        pairs: &[(&str, &str)],
    ) -> Result<ChatExchange, ControllerError> {
        let context: BTreeMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let exchange = self.ctl.gateway.complete(role, &context)?;
        self.state.token_ledger.add(exchange.usage);
        Ok(exchange)
    }

    fn event(&mut self, name: &str, level: u32, iter: u32) {
        self.state.events.push(SessionEvent {
            task_id: self.task.id.clone(),
            event: name.to_string(),
            level,
            iter,
            tokens: self.state.token_ledger.total,
        });
    }
}

fn render_proposals(proposals: &[DebateProposal]) -> String {
    if proposals.is_empty() {
        return "(none)".to_string();
    }
    proposals
        .iter()
        .map(|p| {
            format!(
                "Debater {}: STRATEGY: {} | PARAMS: {} | SCORE: {}",
                p.debater_index, p.strategy_text, p.param_text, p.self_score
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `STRATEGY:`/`PARAMS:`/`SCORE:` lines; a reply without a strategy becomes
/// a minimal-weight proposal.
fn parse_proposal(reply: &str, debater_index: usize) -> DebateProposal {
    let strategy = labeled_line(reply, "STRATEGY");
    let params = labeled_line(reply, "PARAMS").unwrap_or_default();
    let score = labeled_line(reply, "SCORE")
        .and_then(|s| s.parse::<Real>().ok())
        .map(|s| s.clamp(0.0, 1.0));
    match strategy {
        Some(strategy_text) => DebateProposal {
            debater_index,
            strategy_text,
            param_text: params,
            self_score: score.unwrap_or(0.5),
        },
        None => DebateProposal {
            debater_index,
            strategy_text: String::new(),
            param_text: String::new(),
            self_score: 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::MockBackend;
    use crate::gateway::{BackendDescriptor, RetryPolicy};
    use crate::task::{estimate_complexity, IOExample};
    use std::sync::Arc;

    fn sh_task(id: &str) -> Task {
        let mut task = Task {
            id: id.to_string(),
            statement: "Emit the token R1 on standard output.".to_string(),
            visible_examples: vec![IOExample::new("", "R1")],
            hidden_tests: vec![IOExample::new("ignored", "R1")],
            entry_point: None,
            tags: vec!["lang:sh".to_string()],
            complexity: 0.0,
        };
        task.complexity = estimate_complexity(&task);
        task
    }

    fn fenced(source: &str) -> String {
        format!("```sh\n{source}\n```")
    }

    fn debate_reply(strategy: &str) -> String {
        format!("STRATEGY: {strategy}\nPARAMS: none\nSCORE: 0.9")
    }

    /// Instrumented variant preserving `stdout_line` and emitting one trace
    /// event with the given value.
    fn instrumented(stdout_line: &str, value: u32) -> String {
        fenced(&format!(
            "echo {stdout_line}\necho 'SEMAG_TRACE|line=1|x={value}' >&2"
        ))
    }

    struct Rig {
        gateway: Gateway,
        executor: Executor,
        limits: ResourceLimits,
        performance: PerformanceTable,
    }

    impl Rig {
        fn new(mock: Arc<MockBackend>, n_debater: usize) -> Self {
            Rig {
                gateway: Gateway::new(BackendDescriptor::new("mock-model", "mock://"), mock)
                    .with_retry(RetryPolicy {
                        max_attempts: 3,
                        base_delay_ms: 1,
                    }),
                executor: Executor::new(4),
                limits: ResourceLimits::default(),
                performance: PerformanceTable::new(n_debater),
            }
        }

        fn solve(
            &self,
            cfg: &ControllerConfig,
            task: &Task,
        ) -> Result<(Program, SessionState), ControllerError> {
            Controller {
                cfg,
                gateway: &self.gateway,
                executor: &self.executor,
                limits: &self.limits,
                performance: &self.performance,
                default_language: "python",
            }
            .solve(task)
        }
    }

    #[test]
    fn level1_pass_uses_exactly_one_coder_call() {
        let mock = Arc::new(MockBackend::new());
        mock.script_role(AgentRole::Coder, fenced("echo R1"));
        let rig = Rig::new(Arc::clone(&mock), 3);
        let (program, state) = rig
            .solve(&ControllerConfig::default(), &sh_task("t1"))
            .unwrap();

        assert_eq!(state.final_level, 1);
        assert_eq!(state.level, Level::Done);
        assert_eq!(program.produced_by, ProducedBy::Level1);
        assert_eq!(rig.gateway.calls_for(AgentRole::Coder), 1);
        assert_eq!(rig.gateway.calls_for(AgentRole::Planner), 0);
        assert!(state.plan.is_none());
        assert!(state.token_ledger.total > 0);
        // No Level-2+ exchange of any kind happened.
        assert!(rig
            .gateway
            .transcript()
            .iter()
            .all(|r| r.role == AgentRole::Coder));
        assert!(state
            .events
            .iter()
            .any(|e| e.event == "finish" && e.level == 1));
    }

    #[test]
    fn prose_reply_fails_level1_and_escalates() {
        let mock = Arc::new(MockBackend::new());
        mock.script_role(AgentRole::Coder, "I would print R1, roughly.");
        mock.script_role(AgentRole::Coder, fenced("echo R1"));
        mock.script_role(AgentRole::Planner, "```plan\n1. print R1\n```");
        mock.script_role(
            AgentRole::PlanVerifier,
            "VERDICT: accept\n```plan\n1. print R1\n```\n```log\nok\n```",
        );
        let rig = Rig::new(mock, 3);
        let (_, state) = rig
            .solve(&ControllerConfig::default(), &sh_task("t2"))
            .unwrap();

        assert_eq!(state.final_level, 2);
        assert_eq!(rig.gateway.calls_for(AgentRole::Planner), 1);
        assert_eq!(rig.gateway.calls_for(AgentRole::PlanVerifier), 1);
        let plan = state.plan.expect("plan recorded");
        assert!(plan.verified);
        assert_eq!(plan.logs, vec!["ok"]);
        assert!(state.events.iter().any(|e| e.event == "plan_accepted"));
        // The Level-2 coder prompt embeds the accepted plan verbatim.
        let coder_digests: Vec<_> = rig
            .gateway
            .transcript()
            .into_iter()
            .filter(|r| r.role == AgentRole::Coder)
            .collect();
        assert_eq!(coder_digests.len(), 2);
    }

    #[test]
    fn always_revising_verifier_exhausts_m_plan() {
        let mock = Arc::new(MockBackend::new());
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        mock.script_role(AgentRole::Planner, "```plan\n1. first attempt\n```");
        mock.script_role(
            AgentRole::PlanVerifier,
            "VERDICT: revise\n```plan\n1. second attempt\n```",
        );
        mock.script_role(
            AgentRole::PlanVerifier,
            "VERDICT: revise\n```plan\n1. third attempt\n```",
        );
        mock.script_role(AgentRole::Coder, fenced("echo R1"));
        let cfg = ControllerConfig {
            m_plan: 2,
            ..ControllerConfig::default()
        };
        let rig = Rig::new(mock, 3);
        let (_, state) = rig.solve(&cfg, &sh_task("t3")).unwrap();

        assert_eq!(rig.gateway.calls_for(AgentRole::PlanVerifier), 2);
        assert_eq!(state.counters.plan_iters, 2);
        let plan = state.plan.expect("plan recorded");
        assert!(!plan.verified);
        // The refined plan of round 1 was fed into round 2 and kept.
        assert_eq!(plan.steps, vec!["1. third attempt"]);
        assert_eq!(plan.revision, 2);
        assert_eq!(state.final_level, 2);
    }

    #[test]
    fn debug_fix_lands_on_second_iteration() {
        let mock = Arc::new(MockBackend::new());
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        mock.script_role(AgentRole::Planner, "```plan\n1. p\n```");
        mock.script_role(
            AgentRole::PlanVerifier,
            "VERDICT: accept\n```plan\n1. p\n```",
        );
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        // Iteration 1: trace x=1, failed patch.
        mock.script_role(AgentRole::EmbedTrace, instrumented("WRONG", 1));
        mock.script_role(AgentRole::Explainer, "prints the wrong token");
        mock.script_role(AgentRole::Suggestor, "replace WRONG with STILL_WRONG");
        mock.script_role(AgentRole::Debugger, fenced("echo STILL_WRONG"));
        // Iteration 2: trace x=2 (different), successful patch.
        mock.script_role(AgentRole::EmbedTrace, instrumented("STILL_WRONG", 2));
        mock.script_role(AgentRole::Explainer, "still the wrong token");
        mock.script_role(AgentRole::Suggestor, "print R1 instead");
        mock.script_role(AgentRole::Debugger, fenced("echo R1"));
        let rig = Rig::new(mock, 3);
        let (program, state) = rig
            .solve(&ControllerConfig::default(), &sh_task("t4"))
            .unwrap();

        assert_eq!(state.final_level, 3);
        assert_eq!(state.counters.debug_iters, 2);
        assert_eq!(state.counters.try_iters, 1);
        assert_eq!(program.produced_by, ProducedBy::Debug);
        assert_eq!(rig.gateway.calls_for(AgentRole::EmbedTrace), 2);
        assert_eq!(rig.gateway.calls_for(AgentRole::Explainer), 2);
        assert_eq!(rig.gateway.calls_for(AgentRole::Suggestor), 2);
        assert_eq!(rig.gateway.calls_for(AgentRole::Debugger), 2);
        assert_eq!(rig.gateway.calls_for(AgentRole::Debater), 0);
        assert!(!state.events.iter().any(|e| e.event == "stagnation"));
    }

    #[test]
    fn empty_traces_stagnate_then_debate_wins() {
        let mock = Arc::new(MockBackend::new());
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        mock.script_role(AgentRole::Planner, "no plan block here");
        mock.script_role(AgentRole::PlanVerifier, "VERDICT: revise");
        mock.script_role(AgentRole::PlanVerifier, "VERDICT: revise");
        mock.script_role(AgentRole::PlanVerifier, "VERDICT: revise");
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        // Both debug iterations: embed-trace replies with prose, so the
        // fallback produces empty traces; the second empty-vs-empty pair
        // registers as stagnation.
        for _ in 0..2 {
            mock.script_role(AgentRole::EmbedTrace, "cannot instrument this");
            mock.script_role(AgentRole::Explainer, "wrong token");
            mock.script_role(AgentRole::Suggestor, "change it");
            mock.script_role(AgentRole::Debugger, fenced("echo WRONG"));
        }
        for strategy in [
            "rewrite from scratch",
            "rewrite from scratch",
            "rewrite from scratch",
        ] {
            mock.script_role(AgentRole::Debater, debate_reply(strategy));
        }
        mock.script_role(AgentRole::Decider, "Print exactly R1.");
        mock.script_role(AgentRole::Coder, fenced("echo R1"));
        let rig = Rig::new(mock, 3);
        let (program, state) = rig
            .solve(&ControllerConfig::default(), &sh_task("t5"))
            .unwrap();

        assert_eq!(state.final_level, 4);
        assert_eq!(program.produced_by, ProducedBy::DebateRefine);
        assert_eq!(state.counters.debug_iters, 2);
        assert_eq!(state.counters.debate_rounds, 3);
        assert!(state
            .events
            .iter()
            .any(|e| e.event == "stagnation" && e.iter == 2));
        // Tie over identical proposals goes to debater 1, whose reward
        // raises eta by one EMA step.
        assert_eq!(rig.performance.snapshot(), vec![0.3, 0.0, 0.0]);
        assert_eq!(state.debater_performance, vec![0.3, 0.0, 0.0]);
    }

    #[test]
    fn all_levels_failing_exhausts_with_algorithm_bounds() {
        let cfg = ControllerConfig {
            m_plan: 2,
            m_try: 2,
            m_debug: 1,
            n_debater: 2,
            ..ControllerConfig::default()
        };
        let mock = Arc::new(MockBackend::new());
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        mock.script_role(AgentRole::Planner, "```plan\n1. p\n```");
        mock.script_role(AgentRole::PlanVerifier, "VERDICT: revise");
        mock.script_role(AgentRole::PlanVerifier, "VERDICT: revise");
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        for try_iter in 0..2 {
            // One debug iteration per try, each with a distinct trace.
            mock.script_role(AgentRole::EmbedTrace, instrumented("WRONG", try_iter + 1));
            mock.script_role(AgentRole::Explainer, "nope");
            mock.script_role(AgentRole::Suggestor, "try harder");
            mock.script_role(AgentRole::Debugger, fenced("echo WRONG"));
            mock.script_role(AgentRole::Debater, debate_reply("idea one"));
            mock.script_role(AgentRole::Debater, debate_reply("idea two"));
            mock.script_role(AgentRole::Decider, "do better");
            mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        }
        let rig = Rig::new(Arc::clone(&mock), 2);
        let (program, state) = rig.solve(&cfg, &sh_task("t6")).unwrap();

        assert_eq!(state.level, Level::Exhausted);
        assert_eq!(state.final_level, 4);
        assert_eq!(program.source, "echo WRONG");
        assert_eq!(state.counters.try_iters, 2);
        assert_eq!(state.counters.debug_iters, cfg.m_try * cfg.m_debug);
        assert_eq!(state.counters.debate_rounds, cfg.m_try * cfg.n_debater);
        // Algorithm loop bounds, counted from the transcript.
        assert_eq!(rig.gateway.calls_for(AgentRole::Planner), 1);
        assert_eq!(
            rig.gateway.calls_for(AgentRole::PlanVerifier),
            cfg.m_plan as usize
        );
        assert_eq!(
            rig.gateway.calls_for(AgentRole::Debugger),
            (cfg.m_try * cfg.m_debug) as usize
        );
        assert_eq!(
            rig.gateway.calls_for(AgentRole::Debater),
            (cfg.m_try * cfg.n_debater) as usize
        );
        assert_eq!(mock.remaining_steps(), 0);
        assert!(state.events.iter().any(|e| e.event == "exhausted"));
    }

    #[test]
    fn debater_history_grows_in_order() {
        let cfg = ControllerConfig {
            m_plan: 1,
            m_try: 1,
            m_debug: 1,
            ..ControllerConfig::default()
        };
        let mock = Arc::new(MockBackend::new());
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        mock.script_role(AgentRole::Planner, "```plan\n1. p\n```");
        mock.script_role(AgentRole::PlanVerifier, "VERDICT: revise");
        mock.script_role(AgentRole::Coder, fenced("echo WRONG"));
        mock.script_role(AgentRole::EmbedTrace, "prose");
        mock.script_role(AgentRole::Explainer, "e");
        mock.script_role(AgentRole::Suggestor, "s");
        mock.script_role(AgentRole::Debugger, fenced("echo WRONG"));
        mock.script_role(AgentRole::Debater, debate_reply("first idea"));
        mock.script_role(AgentRole::Debater, debate_reply("second idea"));
        mock.script_role(AgentRole::Debater, debate_reply("third idea"));
        mock.script_role(AgentRole::Decider, "go");
        mock.script_role(AgentRole::Coder, fenced("echo R1"));
        let rig = Rig::new(Arc::clone(&mock), 3);
        let (_, state) = rig.solve(&cfg, &sh_task("t7")).unwrap();
        assert_eq!(state.final_level, 4);

        // Debater 1 sees no prior proposals; debater 3 sees 1 then 2, in
        // that order. The decider sees all three plus the chosen strategy.
        let prompts = mock.prompts_for(AgentRole::Debater);
        assert_eq!(prompts.len(), 3);
        assert!(!prompts[0].contains("first idea"));
        assert!(prompts[1].contains("first idea"));
        assert!(!prompts[1].contains("second idea"));
        let first = prompts[2].find("first idea").expect("first in history");
        let second = prompts[2].find("second idea").expect("second in history");
        assert!(first < second);

        let decider = &mock.prompts_for(AgentRole::Decider)[0];
        for idea in ["first idea", "second idea", "third idea"] {
            assert!(decider.contains(idea));
        }
    }

    #[test]
    fn no_visible_examples_is_an_error() {
        let mut task = sh_task("t8");
        task.visible_examples.clear();
        let rig = Rig::new(Arc::new(MockBackend::new()), 3);
        let err = rig
            .solve(&ControllerConfig::default(), &task)
            .expect_err("fails");
        assert!(matches!(err, ControllerError::NoVisibleExamples(_)));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ControllerConfig {
            m_try: 0,
            ..ControllerConfig::default()
        };
        let rig = Rig::new(Arc::new(MockBackend::new()), 3);
        let err = rig.solve(&cfg, &sh_task("t9")).expect_err("fails");
        assert!(matches!(err, ControllerError::InvalidConfig(_)));

        let cfg = ControllerConfig {
            tau_w: 0.0,
            ..ControllerConfig::default()
        };
        let err = rig.solve(&cfg, &sh_task("t9")).expect_err("fails");
        assert!(matches!(err, ControllerError::InvalidConfig(_)));
    }

    #[test]
    fn identical_scripts_give_identical_sessions() {
        let run = || {
            let mock = Arc::new(MockBackend::new());
            mock.script_role(AgentRole::Coder, fenced("echo R1"));
            let rig = Rig::new(mock, 3);
            let (program, state) = rig
                .solve(&ControllerConfig::default(), &sh_task("t10"))
                .unwrap();
            (
                program.source,
                state.token_ledger,
                serde_json::to_string(&state.events).unwrap(),
            )
        };
        assert_eq!(run(), run());
    }
}
