//! Deterministic scripted backend for offline runs and tests.
//!
//! Replies come from per-role FIFO queues first, then a global queue, then
//! an optional responder closure. All state sits behind one mutex, so a
//! single mock can serve concurrent workers while keeping each queue's
//! order intact.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::{
    estimate_tokens, AgentRole, BackendError, BackendReply, ChatBackend, ChatRequest, TokenUsage,
};

/// Responder consulted when no scripted step matches; `None` falls through
/// to a script-exhausted error.
pub type Responder = Arc<dyn Fn(AgentRole, &ChatRequest) -> Option<String> + Send + Sync>;

/// Failure injected by a script step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptedFailure {
    Timeout,
    Status(u16),
    /// Successful transport carrying an empty body.
    Empty,
}

#[derive(Clone)]
enum Step {
    Reply(String),
    Fail(ScriptedFailure),
}

#[derive(Default)]
struct State {
    role_queues: BTreeMap<AgentRole, VecDeque<Step>>,
    global: VecDeque<Step>,
    responder: Option<Responder>,
    calls: Vec<AgentRole>,
    prompts: Vec<(AgentRole, String)>,
}

/// Scripted chat backend. Construction methods take `&self` so a mock can
/// be configured after being wrapped in an `Arc`.
#[derive(Default)]
pub struct MockBackend {
    state: Mutex<State>,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }

    /// Queue a reply for `role`.
    pub fn script_role(&self, role: AgentRole, response: impl Into<String>) {
        self.state
            .lock()
            .unwrap()
            .role_queues
            .entry(role)
            .or_default()
            .push_back(Step::Reply(response.into()));
    }

    /// Queue a failure for `role`.
    pub fn fail_role(&self, role: AgentRole, failure: ScriptedFailure) {
        self.state
            .lock()
            .unwrap()
            .role_queues
            .entry(role)
            .or_default()
            .push_back(Step::Fail(failure));
    }

    /// Queue a reply served to any role once role queues are empty.
    pub fn script_global(&self, response: impl Into<String>) {
        self.state
            .lock()
            .unwrap()
            .global
            .push_back(Step::Reply(response.into()));
    }

    pub fn set_responder(&self, responder: Responder) {
        self.state.lock().unwrap().responder = Some(responder);
    }

    /// Number of calls observed for `role`.
    pub fn calls_for(&self, role: AgentRole) -> usize {
        self.state
            .lock()
            .unwrap()
            .calls
            .iter()
            .filter(|r| **r == role)
            .count()
    }

    /// Every call's role, in order.
    pub fn calls(&self) -> Vec<AgentRole> {
        self.state.lock().unwrap().calls.clone()
    }

    /// Prompt text observed for `role`, in call order. Messages within one
    /// request are joined with newlines.
    pub fn prompts_for(&self, role: AgentRole) -> Vec<String> {
        self.state
            .lock()
            .unwrap()
            .prompts
            .iter()
            .filter(|(r, _)| *r == role)
            .map(|(_, p)| p.clone())
            .collect()
    }

    /// Scripted steps not yet consumed.
    pub fn remaining_steps(&self) -> usize {
        let state = self.state.lock().unwrap();
        state.role_queues.values().map(VecDeque::len).sum::<usize>() + state.global.len()
    }
}

impl ChatBackend for MockBackend {
    fn kind(&self) -> &str {
        "mock"
    }

    fn send(&self, role: AgentRole, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        let mut state = self.state.lock().unwrap();
        state.calls.push(role);
        let prompt = request
            .messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let prompt_tokens = estimate_tokens(&prompt);
        state.prompts.push((role, prompt));
        let step = state
            .role_queues
            .get_mut(&role)
            .and_then(VecDeque::pop_front)
            .or_else(|| state.global.pop_front());
        let step = match step {
            Some(step) => step,
            None => match state.responder.as_ref().and_then(|r| r(role, request)) {
                Some(text) => Step::Reply(text),
                None => {
                    return Err(BackendError::Protocol(format!(
                        "mock script exhausted for role `{role}`"
                    )))
                }
            },
        };
        match step {
            Step::Reply(content) => {
                let usage = TokenUsage::new(prompt_tokens, estimate_tokens(&content));
                Ok(BackendReply {
                    content,
                    usage: Some(usage),
                    truncated: false,
                })
            }
            Step::Fail(ScriptedFailure::Timeout) => Err(BackendError::Timeout),
            Step::Fail(ScriptedFailure::Status(code)) => Err(BackendError::Status {
                code,
                body: "scripted failure".to_string(),
            }),
            Step::Fail(ScriptedFailure::Empty) => Ok(BackendReply {
                content: String::new(),
                usage: Some(TokenUsage::new(0, 0)),
                truncated: false,
            }),
        }
    }
}

/// Reusable script: an ordered recipe for building a [`MockBackend`].
///
/// `None` as the role targets the global queue.
#[derive(Clone, Default)]
pub struct MockScript {
    steps: Vec<(Option<AgentRole>, Step)>,
    responder: Option<Responder>,
}

impl MockScript {
    pub fn new() -> Self {
        MockScript::default()
    }

    pub fn role(mut self, role: AgentRole, response: impl Into<String>) -> Self {
        self.steps.push((Some(role), Step::Reply(response.into())));
        self
    }

    pub fn fail(mut self, role: AgentRole, failure: ScriptedFailure) -> Self {
        self.steps.push((Some(role), Step::Fail(failure)));
        self
    }

    pub fn global(mut self, response: impl Into<String>) -> Self {
        self.steps.push((None, Step::Reply(response.into())));
        self
    }

    pub fn with_responder(mut self, responder: Responder) -> Self {
        self.responder = Some(responder);
        self
    }

    pub fn build(&self) -> Arc<MockBackend> {
        let mock = Arc::new(MockBackend::new());
        for (role, step) in &self.steps {
            let mut state = mock.state.lock().unwrap();
            match role {
                Some(role) => state
                    .role_queues
                    .entry(*role)
                    .or_default()
                    .push_back(step.clone()),
                None => state.global.push_back(step.clone()),
            }
        }
        if let Some(responder) = &self.responder {
            mock.set_responder(Arc::clone(responder));
        }
        mock
    }
}
