//! `semag`: benchmark solving, backbone selection, and run reporting.
//!
//! Exit codes: 0 for a clean run, 1 for usage errors (bad arguments,
//! unreadable inputs, invalid config), 2 for infrastructure errors
//! (backend or artifact failures, quarantined tasks).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use semag_core::config::{Config, GatewaySettings};
use semag_core::evolve::{
    select_backbone, BackendProvider, EvolveError, FixtureSearchClient, Registry, SearchClient,
    SelectionConfig,
};
use semag_core::gateway::backend::HttpBackend;
use semag_core::gateway::{BackendDescriptor, Gateway};
use semag_core::harness::fixtures::{LevelScenario, ScenarioBook};
use semag_core::harness::{
    load_dataset, load_run_metrics, report, run_benchmark, BackendSource, HarnessError,
    ReportFormat, RunOptions,
};
use semag_core::task::{ParseOptions, Schema, Task};
use semag_core::{Executor, ResourceLimits};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Parser)]
#[command(
    name = "semag",
    version,
    about = "Hierarchical multi-agent code generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a dataset through the four-level workflow and record metrics.
    Solve(SolveArgs),
    /// Pick a backbone model from search evidence and a model registry.
    SelectBackbone(SelectArgs),
    /// Render the metrics of a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Dataset file: JSON array or JSONL of task records.
    #[arg(long)]
    dataset: PathBuf,
    /// Record schema: `humaneval` or `generic`.
    #[arg(long, default_value = "generic")]
    schema: String,
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `mock` for the offline scripted backend, else a model id served by
    /// the endpoint in SEMAG_ENDPOINT (API key via the env var named by
    /// SEMAG_AUTH_ENV, default SEMAG_API_KEY).
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Worker count; overrides the config value.
    #[arg(long)]
    parallel: Option<usize>,
    /// Seed for dataset ingestion (visible-example promotion).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Artifact directory for manifest, metrics, events, and transcripts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Text file describing the task domain.
    #[arg(long)]
    profile: PathBuf,
    /// JSON array of model registry entries.
    #[arg(long)]
    registry: PathBuf,
    /// Corpus JSON path for offline search, or `live`.
    #[arg(long)]
    fixture: String,
    /// Directory for the selection report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory produced by `solve --out`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "table")]
    format: String,
}

enum Failure {
    Usage(String),
    Infra(String),
}

impl Failure {
    fn usage(err: impl std::fmt::Display) -> Failure {
        Failure::Usage(err.to_string())
    }

    fn infra(err: impl std::fmt::Display) -> Failure {
        Failure::Infra(err.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Solve(args) => solve(args),
        Command::SelectBackbone(args) => select(args),
        Command::Report(args) => render(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(Failure::Infra(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

/// One shared HTTP backend; a fresh gateway per task keeps transcripts
/// separate while reusing the connection pool.
struct LiveSource {
    descriptor: BackendDescriptor,
    backend: Arc<HttpBackend>,
}

impl BackendSource for LiveSource {
    fn gateway_for_task(&self, _task: &Task) -> Gateway {
        Gateway::new(self.descriptor.clone(), self.backend.clone())
    }
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => Config::load(path).map_err(Failure::usage)?,
        None => Config::default(),
    };
    if let Some(parallel) = args.parallel {
        config.harness.parallelism = parallel;
    }
    let schema: Schema = args.schema.parse().map_err(Failure::usage)?;
    let tasks = load_dataset(&args.dataset, schema, &ParseOptions::default(), args.seed)
        .map_err(Failure::usage)?;

    let source: Box<dyn BackendSource> = if args.backend == "mock" {
        let mut book = ScenarioBook::new();
        for task in &tasks {
            book.script(task, LevelScenario::L1);
        }
        Box::new(book)
    } else {
        let endpoint = std::env::var("SEMAG_ENDPOINT").map_err(|_| {
            Failure::Usage(format!(
                "backend `{}` needs SEMAG_ENDPOINT to point at a chat-completion API",
                args.backend
            ))
        })?;
        let mut descriptor = config.descriptor(&args.backend, &endpoint);
        descriptor.auth_env_var =
            Some(std::env::var("SEMAG_AUTH_ENV").unwrap_or_else(|_| "SEMAG_API_KEY".to_string()));
        let backend = Arc::new(HttpBackend::new(&descriptor, REQUEST_TIMEOUT));
        Box::new(LiveSource {
            descriptor,
            backend,
        })
    };

    let options = RunOptions {
        dataset_label: args.dataset.display().to_string(),
        schema_label: schema.to_string(),
        backend_label: args.backend.clone(),
        seed: args.seed,
        out_dir: args.out.clone(),
    };
    let (metrics, manifest) =
        run_benchmark(&tasks, &config, source.as_ref(), &options).map_err(|err| match err {
            HarnessError::EmptyDataset | HarnessError::InvalidConfig(_) => Failure::usage(err),
            other => Failure::infra(other),
        })?;

    println!("run {}", manifest.run_id);
    print!("{}", report(&metrics, ReportFormat::Table));
    if let Some(out) = &args.out {
        println!("artifacts in {}", out.display());
    }
    if metrics.errored > 0 {
        return Err(Failure::Infra(format!(
            "{} task(s) quarantined by infrastructure errors",
            metrics.errored
        )));
    }
    Ok(())
}

/// Builds per-model gateways from registry entries for sampling.
struct RegistryProvider {
    registry: Registry,
    settings: GatewaySettings,
}

impl RegistryProvider {
    fn descriptor_for(&self, model_id: &str) -> Result<BackendDescriptor, EvolveError> {
        let entry = self.registry.get(model_id).ok_or_else(|| {
            EvolveError::Registry(format!("model `{model_id}` is not in the registry"))
        })?;
        let mut descriptor = BackendDescriptor::new(&entry.model_id, &entry.endpoint);
        descriptor.temperature = self.settings.temperature;
        descriptor.max_output_tokens = self.settings.max_output_tokens;
        descriptor.auth_env_var = entry.auth_env_var.clone();
        Ok(descriptor)
    }
}

impl BackendProvider for RegistryProvider {
    fn gateway_for(&self, model_id: &str) -> Result<Gateway, EvolveError> {
        let descriptor = self.descriptor_for(model_id)?;
        let backend = Arc::new(HttpBackend::new(&descriptor, REQUEST_TIMEOUT));
        Ok(Gateway::new(descriptor, backend).with_retry(self.settings.retry_policy()))
    }
}

fn select(args: SelectArgs) -> Result<(), Failure> {
    let profile = std::fs::read_to_string(&args.profile).map_err(|e| {
        Failure::Usage(format!(
            "cannot read profile {}: {e}",
            args.profile.display()
        ))
    })?;
    let registry = Registry::load(&args.registry).map_err(Failure::usage)?;
    let search_client: Box<dyn SearchClient> = if args.fixture == "live" {
        return Err(Failure::Infra(
            "no live search endpoint is configured in this build; supply a fixture corpus path"
                .to_string(),
        ));
    } else {
        Box::new(FixtureSearchClient::load(Path::new(&args.fixture)).map_err(Failure::usage)?)
    };

    let settings = GatewaySettings::default();
    let provider = RegistryProvider {
        registry: registry.clone(),
        settings: settings.clone(),
    };
    let default_model = registry
        .default_model()
        .ok_or_else(|| Failure::Usage("registry has no entries".to_string()))?
        .to_string();
    let gateway = provider
        .gateway_for(&default_model)
        .map_err(Failure::usage)?;

    let executor = Executor::new(4);
    let limits = ResourceLimits::default();
    // No probe dataset flows through the CLI yet, so proposal confidences
    // rest at zero and ties resolve lexicographically.
    let (winner, selection_report) = select_backbone(
        &SelectionConfig::default(),
        &profile,
        &registry,
        &gateway,
        &executor,
        &limits,
        search_client.as_ref(),
        &provider,
        &[],
    )
    .map_err(|err| match err {
        EvolveError::EmptyRegistry | EvolveError::InvalidConfig(_) => Failure::usage(err),
        other => Failure::infra(other),
    })?;

    println!("winner {winner}");
    for row in &selection_report.tally {
        println!("  {} {:.3}", row.model_id, row.score);
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)
            .map_err(|e| Failure::Infra(format!("cannot create {}: {e}", out.display())))?;
        let path = out.join("selection_report.json");
        let body = serde_json::to_string_pretty(&selection_report)
            .map_err(|e| Failure::Infra(e.to_string()))?;
        std::fs::write(&path, format!("{body}\n"))
            .map_err(|e| Failure::Infra(format!("cannot write {}: {e}", path.display())))?;
        println!("report in {}", path.display());
    }
    Ok(())
}

fn render(args: ReportArgs) -> Result<(), Failure> {
    let format: ReportFormat = args.format.parse().map_err(Failure::Usage)?;
    let metrics = load_run_metrics(&args.run).map_err(Failure::usage)?;
    print!("{}", report(&metrics, format));
    Ok(())
}
