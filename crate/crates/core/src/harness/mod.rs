//! Batch benchmark runner: parallel solves, metrics, and run artifacts.
//!
//! Parallelism is at task granularity; each task owns a fresh gateway over
//! the run's backend source, so transcripts never interleave and a
//! scripted run is reproducible regardless of worker scheduling. Latency
//! figures are kept out of `metrics.json` (they land in `timing.json`) so
//! identical manifests yield byte-identical metrics.

pub mod fixtures;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::Config;
use crate::controller::{Controller, PerformanceTable, SessionEvent};
use crate::exec::Executor;
use crate::gateway::{Gateway, TranscriptRecord};
use crate::math::{mean, population_std};
use crate::task::{parse_task, run_tests, ParseOptions, Schema, Task, TaskError};
use crate::Real;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] TaskError),
    #[error("cannot read dataset `{path}`: {source}")]
    DatasetIo {
        path: String,
        source: std::io::Error,
    },
    #[error("artifact I/O at `{path}`: {source}")]
    Artifact {
        path: String,
        source: std::io::Error,
    },
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
    #[error("aggregation needs at least two runs")]
    TooFewRuns,
    #[error("aggregation over mismatched task sets")]
    MismatchedRuns,
}

/// Supplies a fresh gateway per task. Scripted sources hand each task its
/// own mock; live sources share one HTTP backend across gateways.
pub trait BackendSource: Send + Sync {
    fn gateway_for_task(&self, task: &Task) -> Gateway;
}

/// Labels and destinations of one benchmark run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dataset_label: String,
    pub schema_label: String,
    pub backend_label: String,
    pub seed: u64,
    /// Artifact directory; `None` keeps the run in memory.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            dataset_label: "inline".to_string(),
            schema_label: "generic".to_string(),
            backend_label: "mock".to_string(),
            seed: 0,
            out_dir: None,
        }
    }
}

/// One task's outcome. `final_level` 0 marks a task quarantined by an
/// infrastructure error; such rows never count as passes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub passed: bool,
    pub errored: bool,
    pub final_level: u32,
    pub tokens: u64,
    pub wall_ms: u64,
}

/// Aggregated run results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub pass_at_1: Real,
    pub per_level_counts: BTreeMap<u32, usize>,
    pub errored: usize,
    pub tokens_total: u64,
    pub tokens_per_task_avg: Real,
    pub latency_per_task_avg: Real,
    pub per_task: Vec<TaskRow>,
}

#[derive(Serialize)]
struct StableRow<'a> {
    task_id: &'a str,
    passed: bool,
    errored: bool,
    final_level: u32,
    tokens: u64,
}

#[derive(Serialize)]
struct StableMetrics<'a> {
    pass_at_1: Real,
    per_level_counts: &'a BTreeMap<u32, usize>,
    errored: usize,
    tokens_total: u64,
    tokens_per_task_avg: Real,
    per_task: Vec<StableRow<'a>>,
}

impl Metrics {
    /// Scheduling-sensitive fields (infrastructure errors aside, the wall
    /// times) excluded; this is what lands in `metrics.json`.
    pub fn deterministic_json(&self) -> Result<String, serde_json::Error> {
        let stable = StableMetrics {
            pass_at_1: self.pass_at_1,
            per_level_counts: &self.per_level_counts,
            errored: self.errored,
            tokens_total: self.tokens_total,
            tokens_per_task_avg: self.tokens_per_task_avg,
            per_task: self
                .per_task
                .iter()
                .map(|r| StableRow {
                    task_id: &r.task_id,
                    passed: r.passed,
                    errored: r.errored,
                    final_level: r.final_level,
                    tokens: r.tokens,
                })
                .collect(),
        };
        Ok(format!("{}\n", serde_json::to_string_pretty(&stable)?))
    }

    fn from_rows(per_task: Vec<TaskRow>, strict_infra: bool) -> Metrics {
        let total = per_task.len();
        let errored = per_task.iter().filter(|r| r.errored).count();
        let passed = per_task.iter().filter(|r| r.passed).count();
        let denominator = if strict_infra { total - errored } else { total };
        let pass_at_1 = if denominator == 0 {
            0.0
        } else {
            passed as Real / denominator as Real
        };
        let mut per_level_counts = BTreeMap::new();
        for row in &per_task {
            *per_level_counts.entry(row.final_level).or_insert(0) += 1;
        }
        let tokens_total: u64 = per_task.iter().map(|r| r.tokens).sum();
        let walls: Vec<Real> = per_task.iter().map(|r| r.wall_ms as Real).collect();
        Metrics {
            pass_at_1,
            per_level_counts,
            errored,
            tokens_total,
            tokens_per_task_avg: tokens_total as Real / total as Real,
            latency_per_task_avg: mean(&walls),
            per_task,
        }
    }
}

/// Everything needed to reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Digest of dataset, schema, backend, seed, and config; mock runs with
    /// equal ids produce byte-identical metrics.
    pub run_id: String,
    pub dataset: String,
    pub schema: String,
    pub task_count: usize,
    pub backend: String,
    pub seed: u64,
    pub parallelism: usize,
    pub config_toml: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

/// Solve every task through the full level hierarchy and judge the final
/// program on the hidden tests. Infrastructure failures quarantine the
/// task: it is marked errored, counts as a fail unless
/// `harness.strict_infra` excludes it from the denominator, and never
/// aborts the run.
pub fn run_benchmark(
    tasks: &[Task],
    config: &Config,
    source: &dyn BackendSource,
    options: &RunOptions,
) -> Result<(Metrics, RunManifest), HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    config
        .validate()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let config_toml = config
        .to_toml()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let parallelism = config.harness.parallelism;
    let started_unix_ms = unix_ms();

    let executor = Executor::new(parallelism);
    let performance = PerformanceTable::new(config.controller.n_debater as usize);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TaskOutcome>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                let outcome = solve_one(&tasks[i], config, source, &executor, &performance);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let outcomes: Vec<TaskOutcome> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every task index was claimed by a worker"))
        .collect();

    let rows: Vec<TaskRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    let metrics = Metrics::from_rows(rows, config.harness.strict_infra);
    let manifest = RunManifest {
        run_id: run_id(options, &config_toml),
        dataset: options.dataset_label.clone(),
        schema: options.schema_label.clone(),
        task_count: tasks.len(),
        backend: options.backend_label.clone(),
        seed: options.seed,
        parallelism,
        config_toml,
        started_unix_ms,
        finished_unix_ms: unix_ms(),
    };

    if let Some(dir) = &options.out_dir {
        write_artifacts(dir, &manifest, &metrics, &outcomes)?;
    }
    Ok((metrics, manifest))
}

struct TaskOutcome {
    row: TaskRow,
    events: Vec<SessionEvent>,
    transcript: Vec<TranscriptRecord>,
}

fn solve_one(
    task: &Task,
    config: &Config,
    source: &dyn BackendSource,
    executor: &Executor,
    performance: &PerformanceTable,
) -> TaskOutcome {
    let start = Instant::now();
    let gateway = source
        .gateway_for_task(task)
        .with_retry(config.gateway.retry_policy());
    let controller = Controller {
        cfg: &config.controller,
        gateway: &gateway,
        executor,
        limits: &config.limits,
        performance,
        default_language: &config.harness.default_language,
    };

    let mut events = Vec::new();
    let mut tokens = 0;
    let mut errored = false;
    let mut passed = false;
    let mut final_level = 0;
    match controller.solve(task) {
        Ok((program, state)) => {
            tokens = state.token_ledger.total;
            events = state.events;
            match run_tests(&program, &task.hidden_tests, executor, &config.limits) {
                Ok(report) => {
                    passed = report.all_passed;
                    final_level = state.final_level;
                }
                Err(err) => {
                    log::warn!("hidden-test judging of `{}` failed: {err}", task.id);
                    errored = true;
                }
            }
        }
        Err(err) => {
            log::warn!(
                "task `{}` quarantined by infrastructure error: {err}",
                task.id
            );
            errored = true;
        }
    }

    TaskOutcome {
        row: TaskRow {
            task_id: task.id.clone(),
            passed,
            errored,
            final_level,
            tokens,
            wall_ms: start.elapsed().as_millis() as u64,
        },
        events,
        transcript: gateway.transcript(),
    }
}

fn run_id(options: &RunOptions, config_toml: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [
        options.dataset_label.as_str(),
        options.schema_label.as_str(),
        options.backend_label.as_str(),
        &options.seed.to_string(),
        config_toml,
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    task_id: &'a str,
    #[serde(flatten)]
    record: &'a TranscriptRecord,
}

fn write_artifacts(
    dir: &Path,
    manifest: &RunManifest,
    metrics: &Metrics,
    outcomes: &[TaskOutcome],
) -> Result<(), HarnessError> {
    let write = |name: &str, content: String| -> Result<(), HarnessError> {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|source| HarnessError::Artifact {
            path: path.display().to_string(),
            source,
        })
    };
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Artifact {
        path: dir.display().to_string(),
        source,
    })?;

    write(
        "manifest.json",
        format!("{}\n", serde_json::to_string_pretty(manifest)?),
    )?;
    write("metrics.json", metrics.deterministic_json()?)?;

    let timing = serde_json::json!({
        "latency_per_task_avg": metrics.latency_per_task_avg,
        "per_task": metrics
            .per_task
            .iter()
            .map(|r| serde_json::json!({"task_id": r.task_id, "wall_ms": r.wall_ms}))
            .collect::<Vec<_>>(),
    });
    write(
        "timing.json",
        format!("{}\n", serde_json::to_string_pretty(&timing)?),
    )?;

    let mut events = String::new();
    for outcome in outcomes {
        for event in &outcome.events {
            events.push_str(&serde_json::to_string(event)?);
            events.push('\n');
        }
    }
    write("events.jsonl", events)?;

    let mut transcript = String::new();
    for outcome in outcomes {
        for record in &outcome.transcript {
            let line = TranscriptLine {
                task_id: &outcome.row.task_id,
                record,
            };
            transcript.push_str(&serde_json::to_string(&line)?);
            transcript.push('\n');
        }
    }
    write("transcript.jsonl", transcript)?;
    Ok(())
}

/// Load a dataset file: either a JSON array of records or JSONL. The seed
/// drives hidden-example promotion for records without visible examples.
pub fn load_dataset(
    path: &Path,
    schema: Schema,
    opts: &ParseOptions,
    seed: u64,
) -> Result<Vec<Task>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::DatasetIo {
        path: path.display().to_string(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::new();
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let records: Vec<serde_json::Value> = serde_json::from_str(trimmed)?;
        for record in records {
            tasks.push(parse_task(&record.to_string(), schema, opts, &mut rng)?);
        }
    } else {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            tasks.push(parse_task(line, schema, opts, &mut rng)?);
        }
    }
    Ok(tasks)
}

#[derive(Deserialize)]
struct StoredMetrics {
    pass_at_1: Real,
    per_level_counts: BTreeMap<u32, usize>,
    errored: usize,
    tokens_total: u64,
    tokens_per_task_avg: Real,
    per_task: Vec<StoredRow>,
}

#[derive(Deserialize)]
struct StoredRow {
    task_id: String,
    passed: bool,
    errored: bool,
    final_level: u32,
    tokens: u64,
}

#[derive(Deserialize)]
struct StoredTiming {
    latency_per_task_avg: Real,
    per_task: Vec<StoredWall>,
}

#[derive(Deserialize)]
struct StoredWall {
    task_id: String,
    wall_ms: u64,
}

/// Reassemble a run directory's metrics from `metrics.json` plus
/// `timing.json`.
pub fn load_run_metrics(dir: &Path) -> Result<Metrics, HarnessError> {
    let read = |name: &str| -> Result<String, HarnessError> {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|source| HarnessError::Artifact {
            path: path.display().to_string(),
            source,
        })
    };
    let stored: StoredMetrics = serde_json::from_str(&read("metrics.json")?)?;
    let timing: StoredTiming = serde_json::from_str(&read("timing.json")?)?;
    let walls: BTreeMap<&str, u64> = timing
        .per_task
        .iter()
        .map(|w| (w.task_id.as_str(), w.wall_ms))
        .collect();
    Ok(Metrics {
        pass_at_1: stored.pass_at_1,
        per_level_counts: stored.per_level_counts,
        errored: stored.errored,
        tokens_total: stored.tokens_total,
        tokens_per_task_avg: stored.tokens_per_task_avg,
        latency_per_task_avg: timing.latency_per_task_avg,
        per_task: stored
            .per_task
            .into_iter()
            .map(|r| TaskRow {
                wall_ms: walls.get(r.task_id.as_str()).copied().unwrap_or_default(),
                task_id: r.task_id,
                passed: r.passed,
                errored: r.errored,
                final_level: r.final_level,
                tokens: r.tokens,
            })
            .collect(),
    })
}

/// Mean and population standard deviation of one metric across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Real,
    pub std: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub pass_at_1: Stat,
    pub tokens_total: Stat,
    pub tokens_per_task_avg: Stat,
    pub latency_per_task_avg: Stat,
}

/// Cross-run aggregation over the same task set.
pub fn aggregate_runs(runs: &[Metrics]) -> Result<RunSummary, HarnessError> {
    if runs.len() < 2 {
        return Err(HarnessError::TooFewRuns);
    }
    let first: Vec<&str> = runs[0]
        .per_task
        .iter()
        .map(|r| r.task_id.as_str())
        .collect();
    for metrics in &runs[1..] {
        let ids: Vec<&str> = metrics
            .per_task
            .iter()
            .map(|r| r.task_id.as_str())
            .collect();
        if ids != first {
            return Err(HarnessError::MismatchedRuns);
        }
    }
    let stat = |extract: fn(&Metrics) -> Real| -> Stat {
        let values: Vec<Real> = runs.iter().map(extract).collect();
        Stat {
            mean: mean(&values),
            std: population_std(&values),
        }
    };
    Ok(RunSummary {
        runs: runs.len(),
        pass_at_1: stat(|m| m.pass_at_1),
        tokens_total: stat(|m| m.tokens_total as Real),
        tokens_per_task_avg: stat(|m| m.tokens_per_task_avg),
        latency_per_task_avg: stat(|m| m.latency_per_task_avg),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct VersionedReport {
    schema_version: u32,
    metrics: Metrics,
}

/// Render metrics deterministically.
///
/// The table shows headline numbers plus the per-level distribution
/// (level 0 collects quarantined tasks). CSV columns are
/// `task_id,passed,errored,final_level,tokens,wall_ms`. JSON wraps the
/// full metrics in `{schema_version: 1, metrics}` and round-trips.
pub fn report(metrics: &Metrics, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!("pass@1             {:.4}\n", metrics.pass_at_1));
            out.push_str(&format!("tasks              {}\n", metrics.per_task.len()));
            out.push_str(&format!("errored            {}\n", metrics.errored));
            out.push_str(&format!("tokens total       {}\n", metrics.tokens_total));
            out.push_str(&format!(
                "tokens/task avg    {:.2}\n",
                metrics.tokens_per_task_avg
            ));
            out.push_str(&format!(
                "latency/task avg   {:.1} ms\n\nlevel  solved\n",
                metrics.latency_per_task_avg
            ));
            for (level, count) in &metrics.per_level_counts {
                let label = if *level == 0 {
                    "err".to_string()
                } else {
                    level.to_string()
                };
                out.push_str(&format!("{label:<5}  {count}\n"));
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from("task_id,passed,errored,final_level,tokens,wall_ms\n");
            for r in &metrics.per_task {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.task_id, r.passed, r.errored, r.final_level, r.tokens, r.wall_ms
                ));
            }
            out
        }
        ReportFormat::Json => {
            let wrapped = VersionedReport {
                schema_version: 1,
                metrics: metrics.clone(),
            };
            format!(
                "{}\n",
                serde_json::to_string_pretty(&wrapped).expect("metrics serialize")
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::{toy_task, LevelScenario, ScenarioBook};
    use super::*;
    use crate::config::Config;

    fn config() -> Config {
        let mut config = Config::default();
        config.gateway.retry_base_delay_ms = 1;
        config.harness.parallelism = 2;
        config
    }

    fn oracle_run(n: usize) -> (Vec<Task>, ScenarioBook) {
        let tasks: Vec<Task> = (0..n).map(|i| toy_task("toy", i)).collect();
        let mut book = ScenarioBook::new();
        for task in &tasks {
            book.script(task, LevelScenario::L1);
        }
        (tasks, book)
    }

    #[test]
    fn oracle_mock_passes_everything_at_level_1() {
        let (tasks, book) = oracle_run(5);
        let (metrics, manifest) =
            run_benchmark(&tasks, &config(), &book, &RunOptions::default()).unwrap();
        assert_eq!(metrics.pass_at_1, 1.0);
        assert_eq!(metrics.per_level_counts, BTreeMap::from([(1, 5)]));
        assert_eq!(metrics.errored, 0);
        assert!(metrics.tokens_total > 0);
        assert_eq!(manifest.task_count, 5);
        assert_eq!(manifest.parallelism, 2);
    }

    #[test]
    fn broken_mock_exhausts_every_task_at_level_4() {
        let tasks: Vec<Task> = (0..5).map(|i| toy_task("broken", i)).collect();
        let mut book = ScenarioBook::new();
        for task in &tasks {
            book.script(task, LevelScenario::Exhausted);
        }
        let (metrics, _) = run_benchmark(&tasks, &config(), &book, &RunOptions::default()).unwrap();
        assert_eq!(metrics.pass_at_1, 0.0);
        assert_eq!(metrics.per_level_counts, BTreeMap::from([(4, 5)]));
        assert!(metrics.per_task.iter().all(|r| !r.passed && !r.errored));
    }

    #[test]
    fn unscripted_task_is_quarantined_not_fatal() {
        let (mut tasks, mut book) = oracle_run(3);
        tasks.push(toy_task("orphan", 99));
        let _ = &mut book;
        let (metrics, _) = run_benchmark(&tasks, &config(), &book, &RunOptions::default()).unwrap();
        assert_eq!(metrics.errored, 1);
        assert_eq!(metrics.pass_at_1, 3.0 / 4.0);
        assert_eq!(metrics.per_level_counts, BTreeMap::from([(0, 1), (1, 3)]));

        let mut strict = config();
        strict.harness.strict_infra = true;
        let (metrics, _) = run_benchmark(&tasks, &strict, &book, &RunOptions::default()).unwrap();
        assert_eq!(metrics.pass_at_1, 1.0);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (_, book) = oracle_run(1);
        let err = run_benchmark(&[], &config(), &book, &RunOptions::default()).expect_err("fails");
        assert!(matches!(err, HarnessError::EmptyDataset));
    }

    #[test]
    fn tokens_total_matches_the_event_ledgers() {
        let (tasks, book) = oracle_run(4);
        let dir = tempfile::tempdir().unwrap();
        let options = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let (metrics, _) = run_benchmark(&tasks, &config(), &book, &options).unwrap();

        // The last event of each task carries that task's cumulative ledger.
        let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
        let mut last_tokens: BTreeMap<String, u64> = BTreeMap::new();
        for line in events.lines() {
            let event: SessionEvent = serde_json::from_str(line).unwrap();
            last_tokens.insert(event.task_id.clone(), event.tokens);
        }
        let total: u64 = last_tokens.values().sum();
        assert_eq!(metrics.tokens_total, total);

        for name in [
            "manifest.json",
            "metrics.json",
            "timing.json",
            "transcript.jsonl",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }

        let loaded = load_run_metrics(dir.path()).unwrap();
        assert_eq!(
            loaded.deterministic_json().unwrap(),
            metrics.deterministic_json().unwrap()
        );
        assert_eq!(loaded.latency_per_task_avg, metrics.latency_per_task_avg);
    }

    #[test]
    fn identical_runs_produce_identical_metrics_json() {
        let run = || {
            let (tasks, book) = oracle_run(6);
            let (metrics, manifest) =
                run_benchmark(&tasks, &config(), &book, &RunOptions::default()).unwrap();
            (metrics.deterministic_json().unwrap(), manifest.run_id)
        };
        let (a, id_a) = run();
        let (b, id_b) = run();
        assert_eq!(a, b);
        assert_eq!(id_a, id_b);
    }

    #[test]
    fn aggregation_means_and_deviations() {
        let (tasks, book) = oracle_run(2);
        let (metrics, _) = run_benchmark(&tasks, &config(), &book, &RunOptions::default()).unwrap();
        let summary = aggregate_runs(&[metrics.clone(), metrics.clone()]).unwrap();
        assert_eq!(summary.runs, 2);
        assert_eq!(summary.pass_at_1.mean, 1.0);
        assert_eq!(summary.pass_at_1.std, 0.0);
        assert_eq!(summary.tokens_total.std, 0.0);

        let mut shifted = metrics.clone();
        shifted.pass_at_1 = 0.8;
        let mut other = metrics.clone();
        other.pass_at_1 = 0.9;
        let summary = aggregate_runs(&[shifted, other]).unwrap();
        assert!((summary.pass_at_1.mean - 0.85).abs() < 1e-12);
        assert!((summary.pass_at_1.std - 0.05).abs() < 1e-12);

        assert!(matches!(
            aggregate_runs(std::slice::from_ref(&metrics)),
            Err(HarnessError::TooFewRuns)
        ));
        let mut renamed = metrics.clone();
        renamed.per_task[0].task_id = "other".to_string();
        assert!(matches!(
            aggregate_runs(&[metrics, renamed]),
            Err(HarnessError::MismatchedRuns)
        ));
    }

    #[test]
    fn report_formats_are_deterministic_and_complete() {
        let (tasks, book) = oracle_run(3);
        let (metrics, _) = run_benchmark(&tasks, &config(), &book, &RunOptions::default()).unwrap();

        let table = report(&metrics, ReportFormat::Table);
        assert!(table.contains("pass@1"));
        assert!(table.contains("level  solved"));
        assert!(table.contains("1      3"));

        let csv = report(&metrics, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("task_id,passed"));

        let json = report(&metrics, ReportFormat::Json);
        let parsed: VersionedReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.schema_version, 1);
        assert_eq!(report(&parsed.metrics, ReportFormat::Json), json);

        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("yaml".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn dataset_loads_from_array_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let record = r#"{"id": "g1", "statement": "Emit the token R1.",
            "visible": [{"input": "", "output": "R1"}],
            "hidden": [{"input": "x", "output": "R1"}], "tags": ["lang:sh"]}"#;
        let array_path = dir.path().join("tasks.json");
        std::fs::write(&array_path, format!("[{record}]")).unwrap();
        let jsonl_path = dir.path().join("tasks.jsonl");
        std::fs::write(&jsonl_path, format!("{}\n", record.replace('\n', " "))).unwrap();

        let opts = ParseOptions::default();
        let from_array = load_dataset(&array_path, Schema::Generic, &opts, 7).unwrap();
        let from_jsonl = load_dataset(&jsonl_path, Schema::Generic, &opts, 7).unwrap();
        assert_eq!(from_array.len(), 1);
        assert_eq!(from_array[0].id, "g1");
        assert_eq!(from_array[0].id, from_jsonl[0].id);
        assert_eq!(from_array[0].statement, from_jsonl[0].statement);
    }
}
