//! Sandboxed execution of candidate programs.
//!
//! Every run owns a fresh temp directory and a child process started from a
//! per-language interpreter command template; the engine never evaluates
//! candidate code in-process. Wall time is enforced by polling with a hard
//! kill, output is capped per stream, and trace-grammar lines are split out
//! of stderr. Candidate misbehavior becomes an [`ExecStatus`]; only
//! infrastructure trouble (missing interpreter, I/O on the temp dir) is an
//! error. Measured wall time may exceed the limit by scheduling slack,
//! bounded in practice by the 10 ms poll interval plus process teardown
//! (well under 250 ms).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{judge_execution, ExampleResult, IOExample, Program, TestReport};

/// Prefix of a trace-grammar line on stderr.
pub const TRACE_PREFIX: &str = "SEMAG_TRACE|";

const POLL_INTERVAL: Duration = Duration::from_millis(10);

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("no interpreter configured for language `{0}`")]
    UnknownLanguage(String),
    #[error("failed to spawn `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("sandbox I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("run_examples requires at least one example")]
    NoExamples,
}

/// Per-run resource budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceLimits {
    pub wall_time_ms: u64,
    pub max_output_bytes: usize,
    /// Processes a single run may hold; v1 runs exactly one child per run
    /// and treats this as the documented contract for that shape.
    pub max_processes: u32,
}

impl Default for ResourceLimits {
    fn default() -> Self {
        ResourceLimits {
            wall_time_ms: 10_000,
            max_output_bytes: 1 << 20,
            max_processes: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "code")]
pub enum ExecStatus {
    Ok,
    NonzeroExit(i32),
    Timeout,
    OutputLimit,
    SpawnFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub stdout: String,
    pub stdout_truncated: bool,
    pub stderr: String,
    pub status: ExecStatus,
    pub wall_time_ms: u64,
    /// Stderr lines matching the trace grammar, in emission order.
    pub trace_lines: Vec<String>,
}

/// How to run programs of one language: argv template plus source file name.
/// `{file}` in an argument expands to the absolute source path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpreterSpec {
    pub command: Vec<String>,
    pub file_name: String,
}

impl InterpreterSpec {
    fn argv(&self, file: &str) -> Vec<String> {
        self.command
            .iter()
            .map(|a| a.replace("{file}", file))
            .collect()
    }
}

fn default_interpreters() -> BTreeMap<String, InterpreterSpec> {
    BTreeMap::from([
        (
            "python".to_string(),
            InterpreterSpec {
                command: vec!["python3".to_string(), "{file}".to_string()],
                file_name: "main.py".to_string(),
            },
        ),
        (
            "sh".to_string(),
            InterpreterSpec {
                command: vec!["sh".to_string(), "{file}".to_string()],
                file_name: "main.sh".to_string(),
            },
        ),
    ])
}

/// Counting semaphore bounding concurrent child processes.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.available.notify_one();
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.0.release();
    }
}

/// Shared, thread-safe program runner.
pub struct Executor {
    interpreters: BTreeMap<String, InterpreterSpec>,
    gate: Semaphore,
}

impl Executor {
    /// `max_parallel` caps concurrent child processes across all callers.
    pub fn new(max_parallel: usize) -> Self {
        Executor {
            interpreters: default_interpreters(),
            gate: Semaphore::new(max_parallel.max(1)),
        }
    }

    pub fn with_interpreter(
        mut self,
        language_tag: impl Into<String>,
        spec: InterpreterSpec,
    ) -> Self {
        self.interpreters.insert(language_tag.into(), spec);
        self
    }

    /// Run `program` once with `stdin`, enforcing `limits`.
    pub fn run(
        &self,
        program: &Program,
        stdin: &str,
        limits: &ResourceLimits,
    ) -> Result<ExecutionResult, ExecError> {
        let spec = self
            .interpreters
            .get(&program.language_tag)
            .ok_or_else(|| ExecError::UnknownLanguage(program.language_tag.clone()))?;

        let dir = tempfile::tempdir()?;
        let source_path = dir.path().join(&spec.file_name);
        std::fs::write(&source_path, &program.source)?;

        let argv = spec.argv(&source_path.to_string_lossy());
        let _permit = {
            self.gate.acquire();
            Permit(&self.gate)
        };
        let start = Instant::now();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(dir.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| ExecError::Spawn {
                command: argv.join(" "),
                source,
            })?;

        let stdin_handle = child.stdin.take().expect("stdin piped");
        let stdin_bytes = stdin.as_bytes().to_vec();
        let stdin_writer = std::thread::spawn(move || {
            let mut handle = stdin_handle;
            // The child may exit without reading; a broken pipe is fine.
            let _ = handle.write_all(&stdin_bytes);
        });

        let stdout_reader = spawn_capped_reader(
            child.stdout.take().expect("stdout piped"),
            limits.max_output_bytes,
        );
        let stderr_reader = spawn_capped_reader(
            child.stderr.take().expect("stderr piped"),
            limits.max_output_bytes,
        );

        let outcome = supervise(
            &mut child,
            start,
            limits,
            &stdout_reader.1,
            &stderr_reader.1,
        );
        let (stdout, stdout_over) = stdout_reader.0.join().expect("stdout reader");
        let (stderr, _stderr_over) = stderr_reader.0.join().expect("stderr reader");
        stdin_writer.join().expect("stdin writer");
        let wall_time_ms = start.elapsed().as_millis() as u64;

        let stdout = String::from_utf8_lossy(&stdout).into_owned();
        let stderr = String::from_utf8_lossy(&stderr).into_owned();
        let trace_lines = stderr
            .lines()
            .filter(|l| l.starts_with(TRACE_PREFIX))
            .map(str::to_string)
            .collect();

        Ok(ExecutionResult {
            stdout,
            stdout_truncated: stdout_over,
            stderr,
            status: outcome,
            wall_time_ms,
            trace_lines,
        })
    }

    /// Run one execution per example and fold verdicts into a report.
    pub fn run_examples(
        &self,
        program: &Program,
        examples: &[IOExample],
        limits: &ResourceLimits,
    ) -> Result<(TestReport, Vec<ExecutionResult>), ExecError> {
        if examples.is_empty() {
            return Err(ExecError::NoExamples);
        }
        let mut per_example = Vec::with_capacity(examples.len());
        let mut executions = Vec::with_capacity(examples.len());
        let mut total_ms = 0;
        for (index, example) in examples.iter().enumerate() {
            let result = self.run(program, &example.input, limits)?;
            total_ms += result.wall_time_ms;
            let (verdict, actual_output) = judge_execution(example, &result);
            per_example.push(ExampleResult {
                index,
                verdict,
                actual_output,
                stderr: result.stderr.clone(),
            });
            executions.push(result);
        }
        Ok((TestReport::from_results(per_example, total_ms), executions))
    }
}

/// Wait for exit, killing on timeout or output overflow.
fn supervise(
    child: &mut Child,
    start: Instant,
    limits: &ResourceLimits,
    stdout_over: &Arc<AtomicBool>,
    stderr_over: &Arc<AtomicBool>,
) -> ExecStatus {
    let budget = Duration::from_millis(limits.wall_time_ms);
    loop {
        if stdout_over.load(Ordering::Relaxed) || stderr_over.load(Ordering::Relaxed) {
            let _ = child.kill();
            let _ = child.wait();
            return ExecStatus::OutputLimit;
        }
        match child.try_wait() {
            Ok(Some(status)) => {
                // Late overflow can race process exit; the flag wins.
                if stdout_over.load(Ordering::Relaxed) || stderr_over.load(Ordering::Relaxed) {
                    return ExecStatus::OutputLimit;
                }
                return if status.success() {
                    ExecStatus::Ok
                } else {
                    ExecStatus::NonzeroExit(status.code().unwrap_or(-1))
                };
            }
            Ok(None) => {}
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return ExecStatus::SpawnFailure;
            }
        }
        if start.elapsed() > budget {
            let _ = child.kill();
            let _ = child.wait();
            return ExecStatus::Timeout;
        }
        std::thread::sleep(POLL_INTERVAL);
    }
}

type CappedReader = (std::thread::JoinHandle<(Vec<u8>, bool)>, Arc<AtomicBool>);

/// Drains a stream to EOF, keeping at most `cap` bytes and raising a flag
/// on overflow. Draining past the cap keeps the child from blocking on a
/// full pipe before the supervisor kills it.
fn spawn_capped_reader<R: Read + Send + 'static>(mut stream: R, cap: usize) -> CappedReader {
    let over = Arc::new(AtomicBool::new(false));
    let over_flag = Arc::clone(&over);
    let handle = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        let mut overflowed = false;
        loop {
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let keep = n.min(cap.saturating_sub(buf.len()));
                    buf.extend_from_slice(&chunk[..keep]);
                    if keep < n {
                        overflowed = true;
                        over_flag.store(true, Ordering::Relaxed);
                    }
                }
            }
        }
        (buf, overflowed)
    });
    (handle, over)
}
