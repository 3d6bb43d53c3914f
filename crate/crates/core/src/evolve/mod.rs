//! Self-evolution: automated backbone selection.
//!
//! Several selector pipelines independently gather evidence about the
//! registry models (keywords, search, relevance filtering, summarization),
//! anchor their proposals in measured sample performance, and a weighted
//! vote picks the backbone. Everything downstream of the search client and
//! the gateway is deterministic, so a frozen corpus plus a scripted mock
//! reproduces a selection bit for bit.

pub mod registry;
pub mod search;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use registry::{Registry, RegistryEntry};
pub use search::{FailingSearchClient, FixtureSearchClient, SearchClient};

use crate::exec::{Executor, ResourceLimits};
use crate::gateway::extract::{extract_code, labeled_line};
use crate::gateway::prompt::format_examples;
use crate::gateway::{AgentRole, Gateway, GatewayError, TokenUsage};
use crate::math::{jaccard, token_set};
use crate::task::{ProducedBy, Program, Task};
use crate::Real;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("search client error: {0}")]
    Search(String),
    #[error("registry error: {0}")]
    Registry(String),
    #[error("registry has no models")]
    EmptyRegistry,
    #[error("no links to summarize")]
    EmptyLinks,
    #[error("no proposals to vote on")]
    EmptyProposals,
    #[error("no sample tasks to measure performance on")]
    EmptyTasks,
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

/// Knobs of the selection pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Independent selector pipelines feeding the vote.
    pub n_selectors: u32,
    /// Crawl depth: search results considered per selector.
    pub n_links: usize,
    /// Strict lower bound on link relevance.
    pub theta_r: Real,
    /// Links older than this many days are discarded.
    pub recency_days: u32,
    /// Tasks used to measure per-model sample performance.
    pub sample_size: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n_selectors: 3,
            n_links: 20,
            theta_r: 0.5,
            recency_days: 30,
            sample_size: 5,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        if self.n_selectors < 1 || self.n_links < 1 || self.recency_days < 1 || self.sample_size < 1
        {
            return Err(EvolveError::InvalidConfig(
                "n_selectors, n_links, recency_days, sample_size must be >= 1".to_string(),
            ));
        }
        if !(self.theta_r > 0.0 && self.theta_r < 1.0) {
            return Err(EvolveError::InvalidConfig(format!(
                "theta_r must lie in (0, 1), got {}",
                self.theta_r
            )));
        }
        Ok(())
    }
}

/// One ranked search hit; `relevance` is filled in by [`filter_links`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkRecord {
    pub url: String,
    pub title: String,
    pub snippet: String,
    pub published_age_days: u32,
    /// Full page body when the client can supply one; summarization falls
    /// back to the snippet otherwise.
    pub page_text: Option<String>,
    pub relevance: Real,
}

/// Concatenated per-link digests of one selector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceSummary {
    pub selector_index: u32,
    pub digest: String,
    pub cited_urls: Vec<String>,
    /// Links whose summarization failed and was skipped.
    pub skipped: u32,
}

/// A selector's vote: model, reason, and measured confidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelProposal {
    pub model_id: String,
    pub rationale: String,
    /// Measured sample performance of `model_id`, never a self-reported
    /// score.
    pub confidence: Real,
}

/// One row of the ranked vote tally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TallyRow {
    pub model_id: String,
    pub score: Real,
}

/// Per-selector section of the selection report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorOutcome {
    pub selector_index: u32,
    pub keywords: Vec<String>,
    pub links_found: usize,
    pub links_kept: usize,
    pub digest: String,
    pub cited_urls: Vec<String>,
    pub summary_skipped: u32,
    pub proposal: Option<ModelProposal>,
    pub tokens: TokenUsage,
    pub latency_ms: u64,
}

/// Full record of one selection: winner, ranked tally, per-selector
/// evidence, measured performance, and cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub winner: String,
    /// True when every proposal was dropped and the registry default won by
    /// forfeit.
    pub fallback_used: bool,
    pub tally: Vec<TallyRow>,
    pub selectors: Vec<SelectorOutcome>,
    pub performance: BTreeMap<String, Real>,
    pub tokens_total: TokenUsage,
    pub latency_ms: u64,
}

/// Builds a gateway for a candidate model so its sample performance can be
/// measured.
pub trait BackendProvider: Send + Sync {
    fn gateway_for(&self, model_id: &str) -> Result<Gateway, EvolveError>;
}

const FALLBACK_KEYWORDS: [&str; 4] = [
    "code generation benchmark",
    "llm coding accuracy",
    "model comparison",
    "pass rate evaluation",
];

/// Task-specific search keywords: one keyword-gen exchange, parsed into
/// 3 to 8 deduplicated lowercase keywords. An empty profile skips the
/// exchange and returns the generic fallback list; a sparse reply is
/// padded from the same list.
pub fn gen_keywords(
    gateway: &Gateway,
    task_profile: &str,
    context: &str,
) -> Result<Vec<String>, EvolveError> {
    if task_profile.trim().is_empty() {
        return Ok(FALLBACK_KEYWORDS.iter().map(|k| k.to_string()).collect());
    }
    let ctx = BTreeMap::from([
        ("profile".to_string(), task_profile.to_string()),
        ("context".to_string(), context.to_string()),
    ]);
    let exchange = gateway.complete(AgentRole::KeywordGen, &ctx)?;
    let mut keywords: Vec<String> = Vec::new();
    for part in exchange.response.split(['\n', ',', ';']) {
        let cleaned = part
            .trim()
            .trim_start_matches(['-', '*', '•'])
            .trim_start_matches(|c: char| c.is_ascii_digit())
            .trim_start_matches(['.', ')'])
            .trim()
            .to_lowercase();
        if !cleaned.is_empty() && !keywords.contains(&cleaned) {
            keywords.push(cleaned);
        }
    }
    for fallback in FALLBACK_KEYWORDS {
        if keywords.len() >= 3 {
            break;
        }
        if !keywords.iter().any(|k| k == fallback) {
            keywords.push(fallback.to_string());
        }
    }
    keywords.truncate(8);
    Ok(keywords)
}

/// Crawl: fetch the client's ranking for the joined keywords, keep the top
/// `n_links`, then drop links older than the recency window. Depth is
/// applied before the window, so a deeper crawl can only add links.
pub fn search(
    keywords: &[String],
    cfg: &SelectionConfig,
    client: &dyn SearchClient,
) -> Result<Vec<LinkRecord>, EvolveError> {
    let query = keywords.join(" ");
    let mut links = client.search(&query)?;
    links.truncate(cfg.n_links);
    links.retain(|l| l.published_age_days <= cfg.recency_days);
    Ok(links)
}

/// Score each link's relevance as the token-set Jaccard overlap between its
/// title plus snippet and the task profile plus keywords, then keep links
/// scoring strictly above `theta_r`, preserving order.
pub fn filter_links(
    links: Vec<LinkRecord>,
    task_profile: &str,
    keywords: &[String],
    theta_r: Real,
) -> Result<Vec<LinkRecord>, EvolveError> {
    if !(theta_r > 0.0 && theta_r < 1.0) {
        return Err(EvolveError::InvalidConfig(format!(
            "theta_r must lie in (0, 1), got {theta_r}"
        )));
    }
    let mut reference: BTreeSet<String> = token_set(task_profile);
    reference.extend(token_set(&keywords.join(" ")));
    let mut kept = Vec::new();
    for mut link in links {
        let text = format!("{} {}", link.title, link.snippet);
        link.relevance = jaccard::<Real>(&token_set(&text), &reference);
        if link.relevance > theta_r {
            kept.push(link);
        }
    }
    Ok(kept)
}

/// One summarizer exchange per link; failures skip the link and bump
/// `skipped` instead of aborting. The digest concatenates the per-link
/// sections, each headed by its URL in brackets.
pub fn summarize(
    gateway: &Gateway,
    task_profile: &str,
    links: &[LinkRecord],
    selector_index: u32,
) -> Result<EvidenceSummary, EvolveError> {
    if links.is_empty() {
        return Err(EvolveError::EmptyLinks);
    }
    let mut sections = Vec::new();
    let mut cited_urls = Vec::new();
    let mut skipped = 0;
    for link in links {
        let page_text = link
            .page_text
            .clone()
            .unwrap_or_else(|| link.snippet.clone());
        let ctx = BTreeMap::from([
            ("profile".to_string(), task_profile.to_string()),
            ("title".to_string(), link.title.clone()),
            ("url".to_string(), link.url.clone()),
            ("page_text".to_string(), page_text),
        ]);
        match gateway.complete(AgentRole::Summarizer, &ctx) {
            Ok(exchange) => {
                sections.push(format!("[{}]\n{}", link.url, exchange.response));
                cited_urls.push(link.url.clone());
            }
            Err(err) => {
                log::warn!("summarization of {} failed, skipping: {err}", link.url);
                skipped += 1;
            }
        }
    }
    Ok(EvidenceSummary {
        selector_index,
        digest: sections.join("\n\n"),
        cited_urls,
        skipped,
    })
}

/// Measured pass fraction of `model_id` over `tasks`: one direct coder
/// exchange per task, judged on the visible examples. Backend failures and
/// extraction failures count as failed tasks.
pub fn sample_performance(
    provider: &dyn BackendProvider,
    model_id: &str,
    tasks: &[Task],
    executor: &Executor,
    limits: &ResourceLimits,
    default_language: &str,
) -> Result<Real, EvolveError> {
    if tasks.is_empty() {
        return Err(EvolveError::EmptyTasks);
    }
    let gateway = provider.gateway_for(model_id)?;
    let mut passed = 0usize;
    for task in tasks {
        let language = task.language_tag(default_language);
        let ctx = BTreeMap::from([
            ("language".to_string(), language.clone()),
            ("statement".to_string(), task.statement.clone()),
            (
                "examples".to_string(),
                format_examples(&task.visible_examples),
            ),
            ("plan".to_string(), String::new()),
            ("guidance".to_string(), String::new()),
        ]);
        let source = match gateway.complete(AgentRole::Coder, &ctx) {
            Ok(exchange) => extract_code(&exchange.response).unwrap_or_default(),
            Err(err) => {
                log::warn!("sampling {model_id} on `{}` failed: {err}", task.id);
                continue;
            }
        };
        let program = Program::initial(source, language, ProducedBy::Level1);
        match executor.run_examples(&program, &task.visible_examples, limits) {
            Ok((report, _)) if report.all_passed => passed += 1,
            Ok(_) => {}
            Err(err) => {
                log::warn!("sampling {model_id} on `{}` did not run: {err}", task.id);
            }
        }
    }
    Ok(passed as Real / tasks.len() as Real)
}

/// One selector exchange over the evidence; the proposed name is
/// canonicalized against the registry (directly, then via one model-matcher
/// exchange). Unmappable proposals are dropped, and the confidence is
/// always the measured performance of the canonical model.
pub fn propose(
    gateway: &Gateway,
    task_profile: &str,
    registry: &Registry,
    evidence: &EvidenceSummary,
    perf_by_model: &BTreeMap<String, Real>,
) -> Result<Option<ModelProposal>, EvolveError> {
    let performance = perf_by_model
        .iter()
        .map(|(model, perf)| format!("{model}: {perf:.2}"))
        .collect::<Vec<_>>()
        .join("\n");
    let ctx = BTreeMap::from([
        ("profile".to_string(), task_profile.to_string()),
        ("models".to_string(), registry.model_list()),
        ("performance".to_string(), performance),
        ("evidence".to_string(), evidence.digest.clone()),
    ]);
    let exchange = gateway.complete(AgentRole::LlmSelector, &ctx)?;
    let Some(candidate) = labeled_line(&exchange.response, "MODEL") else {
        log::warn!(
            "selector {} reply had no MODEL line, proposal dropped",
            evidence.selector_index
        );
        return Ok(None);
    };
    let rationale = labeled_line(&exchange.response, "RATIONALE").unwrap_or_default();
    let canonical = match registry.canonicalize(&candidate) {
        Some(id) => Some(id),
        None => match_via_gateway(gateway, registry, &candidate),
    };
    let Some(model_id) = canonical else {
        log::warn!("proposed model `{candidate}` is unmappable, proposal dropped");
        return Ok(None);
    };
    let confidence = perf_by_model.get(&model_id).copied().unwrap_or(0.0);
    Ok(Some(ModelProposal {
        model_id,
        rationale,
        confidence,
    }))
}

/// One model-matcher exchange; any failure counts as no match.
fn match_via_gateway(gateway: &Gateway, registry: &Registry, candidate: &str) -> Option<String> {
    let ctx = BTreeMap::from([
        ("candidate".to_string(), candidate.to_string()),
        ("models".to_string(), registry.model_list()),
    ]);
    let exchange = match gateway.complete(AgentRole::ModelMatcher, &ctx) {
        Ok(exchange) => exchange,
        Err(err) => {
            log::warn!("model matcher failed for `{candidate}`: {err}");
            return None;
        }
    };
    let matched = labeled_line(&exchange.response, "MODEL")?;
    if matched.eq_ignore_ascii_case("none") {
        return None;
    }
    registry.canonicalize(&matched)
}

/// Weighted vote: each model's score is the sum of the confidences of the
/// proposals naming it; the winner is the argmax, ties broken by the
/// lexicographically smallest model id. Also returns the ranked tally.
/// Each model's confidences are summed in ascending value order, so the
/// result is invariant under proposal reordering even at exact-tie
/// boundaries where float accumulation order would otherwise matter.
pub fn vote(proposals: &[ModelProposal]) -> Result<(String, Vec<TallyRow>), EvolveError> {
    if proposals.is_empty() {
        return Err(EvolveError::EmptyProposals);
    }
    let mut confidences: BTreeMap<&str, Vec<Real>> = BTreeMap::new();
    for p in proposals {
        confidences
            .entry(p.model_id.as_str())
            .or_default()
            .push(p.confidence);
    }
    let mut scores: BTreeMap<&str, Real> = BTreeMap::new();
    for (model, mut values) in confidences {
        values.sort_by(Real::total_cmp);
        scores.insert(model, values.iter().sum());
    }
    // Ascending key order means a strict `>` keeps the smallest id on ties.
    let mut winner = "";
    let mut best = Real::NEG_INFINITY;
    for (&model, &score) in &scores {
        if score > best {
            winner = model;
            best = score;
        }
    }
    let mut tally: Vec<TallyRow> = scores
        .into_iter()
        .map(|(model_id, score)| TallyRow {
            model_id: model_id.to_string(),
            score,
        })
        .collect();
    tally.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    Ok((winner.to_string(), tally))
}

/// End-to-end backbone selection.
///
/// Measures sample performance for every registry model first, then runs
/// `n_selectors` pipelines (keywords, search, filter, summarize, propose)
/// sequentially on the shared gateway, and votes. If every proposal is
/// dropped the registry default wins by forfeit, flagged in the report.
/// The winner is always a registry model.
#[allow(clippy::too_many_arguments)]
pub fn select_backbone(
    cfg: &SelectionConfig,
    task_profile: &str,
    registry: &Registry,
    gateway: &Gateway,
    executor: &Executor,
    limits: &ResourceLimits,
    search_client: &dyn SearchClient,
    provider: &dyn BackendProvider,
    sample_tasks: &[Task],
) -> Result<(String, SelectionReport), EvolveError> {
    cfg.validate()?;
    if registry.is_empty() {
        return Err(EvolveError::EmptyRegistry);
    }
    let started = Instant::now();
    let usage_start = gateway.usage_total();

    let sample = &sample_tasks[..sample_tasks.len().min(cfg.sample_size)];
    let mut performance: BTreeMap<String, Real> = BTreeMap::new();
    for entry in registry.entries() {
        let perf = if sample.is_empty() {
            log::warn!(
                "no sample tasks; performance of {} set to 0",
                entry.model_id
            );
            0.0
        } else {
            match sample_performance(
                provider,
                &entry.model_id,
                sample,
                executor,
                limits,
                "python",
            ) {
                Ok(perf) => perf,
                Err(err) => {
                    log::warn!("sampling {} failed entirely: {err}", entry.model_id);
                    0.0
                }
            }
        };
        performance.insert(entry.model_id.clone(), perf);
    }

    let mut selectors = Vec::new();
    for i in 1..=cfg.n_selectors {
        let selector_start = Instant::now();
        let usage_before = gateway.usage_total();

        let keywords = gen_keywords(gateway, task_profile, &registry.model_list())?;
        let found = search(&keywords, cfg, search_client)?;
        let links_found = found.len();
        let kept = filter_links(found, task_profile, &keywords, cfg.theta_r)?;
        let links_kept = kept.len();

        let (digest, cited_urls, summary_skipped, proposal) = if kept.is_empty() {
            log::warn!("selector {i}: no links survived filtering, no proposal");
            (String::new(), Vec::new(), 0, None)
        } else {
            let evidence = summarize(gateway, task_profile, &kept, i)?;
            let proposal = propose(gateway, task_profile, registry, &evidence, &performance)?;
            (
                evidence.digest,
                evidence.cited_urls,
                evidence.skipped,
                proposal,
            )
        };

        selectors.push(SelectorOutcome {
            selector_index: i,
            keywords,
            links_found,
            links_kept,
            digest,
            cited_urls,
            summary_skipped,
            proposal,
            tokens: usage_delta(usage_before, gateway.usage_total()),
            latency_ms: selector_start.elapsed().as_millis() as u64,
        });
    }

    let proposals: Vec<ModelProposal> = selectors
        .iter()
        .filter_map(|s| s.proposal.clone())
        .collect();
    let (winner, tally, fallback_used) = if proposals.is_empty() {
        let default = registry
            .default_model()
            .expect("nonempty registry has a default")
            .to_string();
        log::warn!("all proposals dropped; falling back to registry default `{default}`");
        (default, Vec::new(), true)
    } else {
        let (winner, tally) = vote(&proposals)?;
        (winner, tally, false)
    };

    let report = SelectionReport {
        winner: winner.clone(),
        fallback_used,
        tally,
        selectors,
        performance,
        tokens_total: usage_delta(usage_start, gateway.usage_total()),
        latency_ms: started.elapsed().as_millis() as u64,
    };
    Ok((winner, report))
}

fn usage_delta(before: TokenUsage, after: TokenUsage) -> TokenUsage {
    TokenUsage {
        prompt: after.prompt - before.prompt,
        completion: after.completion - before.completion,
        total: after.total - before.total,
    }
}
