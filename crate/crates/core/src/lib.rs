//! Hierarchical multi-agent code generation engine.
//!
//! The engine solves programming tasks through four escalating levels:
//! direct generation, plan-and-verify, trace-guided debugging, and
//! multi-agent debate with weighted consensus. A self-evolution pipeline
//! selects the backbone model from search evidence, and a benchmark
//! harness runs datasets in parallel with full token accounting.
//!
//! All agent traffic goes through [`gateway::Gateway`], which serves both
//! live chat-completion HTTP backends and a deterministic scripted mock,
//! so every workflow is testable fully offline.
//!
//! Numeric kernels (edit-distance similarity, decay thresholds, softmax
//! consensus weights, lexical overlap) live in [`math`] and are generic
//! over the scalar type via [`num::Scalar`]; the rest of the crate uses
//! the concrete [`Real`] alias.

pub mod config;
pub mod controller;
pub mod evolve;
pub mod exec;
pub mod gateway;
pub mod harness;
pub mod math;
pub mod num;
pub mod task;
pub mod trace;

/// Concrete scalar used by the orchestration layer.
pub type Real = f64;

pub use config::Config;
pub use controller::{ControllerConfig, SessionState};
pub use exec::{ExecutionResult, Executor, ResourceLimits};
pub use gateway::{AgentRole, BackendDescriptor, ChatExchange, Gateway, TokenUsage};
pub use task::{IOExample, Program, Task, TestReport};
pub use trace::{Trace, TraceEvent, TransitionParams};
