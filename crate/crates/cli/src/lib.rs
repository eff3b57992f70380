//! The `egoverse` command line.
//!
//! Exit codes: 0 success, 1 partial or domain failure, 2 invalid input,
//! 3 backend unreachable or transport failure.
//!
//! Backends are named by URI: `file:///path` for the local SQLite registry
//! file or store directory, `http://host:port` for a running `egoverse serve`.

use std::fmt;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tokio::sync::watch;

use egodb_client::{HttpClient, HttpObjectStore, HttpRegistry};
use egodb_server::AppState;
use egoverse_core::align::normalized_score;
use egoverse_core::datamodel::{Embodiment, EpisodeRecord, Violation};
use egoverse_core::ingest::{now_ns, run_daemon, upload_episode, IngestError, Scanner, UploadMetadata};
use egoverse_core::pipeline::{run_round, Adapters, PipelineError, RetryPolicy, RoundOptions};
use egoverse_core::registry::{EpisodeFilter, GroupBy, Registry, RegistryError, SqliteRegistry};
use egoverse_core::selftest::{run_align_suite, run_flowmatch_suite, FlowFault};
use egoverse_core::store::{FsStore, ObjectStore, StoreError};
use egoverse_core::syncset::{run_sync, SyncConfig, SyncError};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "egoverse", version, about = "Episode registry, ingest, processing and dataset sync")]
pub struct Cli {
    /// Registry URI.
    #[arg(long, global = true, env = "EGODB_REGISTRY")]
    pub registry: Option<String>,
    /// Object store URI.
    #[arg(long, global = true, env = "EGODB_STORE")]
    pub store: Option<String>,
    /// Bearer token for http backends, and the token `serve` requires.
    #[arg(long, global = true, env = "EGODB_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upload a raw episode and its metadata; prints the episode hash.
    Upload {
        #[arg(long)]
        raw: PathBuf,
        /// JSON document with operator, lab, task, embodiment, scene and optional fields.
        #[arg(long)]
        meta: PathBuf,
        /// Distinguishes uploads made in the same nanosecond.
        #[arg(long)]
        nonce: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Register complete uploads found in the store.
    Scan {
        #[arg(long)]
        daemon: bool,
        /// Time between scans in daemon mode, e.g. `1s`, `1h`.
        #[arg(long, default_value = "1h", value_parser = humantime::parse_duration)]
        interval: Duration,
        #[arg(long)]
        json: bool,
    },
    /// Serve the registry and store over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Process every unprocessed episode once.
    Process {
        #[arg(long, default_value_t = 4)]
        parallel: usize,
        /// Episodes that have failed this many times are left alone.
        #[arg(long, default_value_t = RetryPolicy::default().max_attempts)]
        retry_max: u32,
        #[arg(long)]
        json: bool,
    },
    /// List episodes matching a filter.
    Query {
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        include_deleted: bool,
        #[arg(long)]
        json: bool,
    },
    /// Materialize a filtered, split subset into a local cache.
    Sync {
        /// TOML sync configuration; relative `cache_dir` is resolved against its directory.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Episode counts and frame totals per group.
    Stats {
        #[arg(long, value_enum)]
        group_by: GroupArg,
        #[arg(long)]
        json: bool,
    },
    /// Normalized evaluation score, optionally recorded on an eval episode.
    Score {
        #[arg(long)]
        points: f64,
        #[arg(long)]
        max: f64,
        #[arg(long)]
        episode: Option<String>,
        /// Whether the rollout succeeded; required with --episode.
        #[arg(long, requires = "episode")]
        success: Option<bool>,
    },
    /// Run the math invariant suites.
    Selftest {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Debug, Default, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub operator: Option<String>,
    #[arg(long)]
    pub lab: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long, value_enum)]
    pub embodiment: Option<EmbodimentArg>,
    #[arg(long)]
    pub robot_name: Option<String>,
    #[arg(long)]
    pub is_eval: Option<bool>,
    #[arg(long)]
    pub has_processed_path: Option<bool>,
    #[arg(long)]
    pub has_processing_error: Option<bool>,
    /// Case-insensitive substring of the task description.
    #[arg(long)]
    pub text: Option<String>,
}

impl FilterArgs {
    pub fn filter(&self) -> EpisodeFilter {
        EpisodeFilter {
            operator: self.operator.clone(),
            lab: self.lab.clone(),
            task: self.task.clone(),
            scene: self.scene.clone(),
            embodiment: self.embodiment.map(Embodiment::from),
            robot_name: self.robot_name.clone(),
            is_deleted: None,
            is_eval: self.is_eval,
            has_processed_path: self.has_processed_path,
            has_processing_error: self.has_processing_error,
            text: self.text.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EmbodimentArg {
    Human,
    Robot,
}

impl From<EmbodimentArg> for Embodiment {
    fn from(e: EmbodimentArg) -> Self {
        match e {
            EmbodimentArg::Human => Embodiment::Human,
            EmbodimentArg::Robot => Embodiment::Robot,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GroupArg {
    Lab,
    Task,
    Embodiment,
    Scene,
    Operator,
}

impl From<GroupArg> for GroupBy {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Lab => GroupBy::Lab,
            GroupArg::Task => GroupBy::Task,
            GroupArg::Embodiment => GroupBy::Embodiment,
            GroupArg::Scene => GroupBy::Scene,
            GroupArg::Operator => GroupBy::Operator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Align,
    Flowmatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    SignFlip,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn violations_message(v: &[Violation]) -> String {
    let lines: Vec<String> = v.iter().map(|v| format!("  {}: {}", v.field, v.message)).collect();
    format!("invalid metadata:\n{}", lines.join("\n"))
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        match &e {
            RegistryError::Validation(v) => CliError::new(EXIT_INVALID, violations_message(v)),
            RegistryError::InvalidArgument(_) => CliError::new(EXIT_INVALID, e.to_string()),
            RegistryError::Transport { .. } | RegistryError::Storage(_) => CliError::new(EXIT_TRANSPORT, e.to_string()),
            RegistryError::Conflict(_) | RegistryError::NotFound(_) | RegistryError::Precondition(_) => {
                CliError::new(EXIT_FAILURE, e.to_string())
            }
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::InvalidKey(_) => EXIT_INVALID,
            StoreError::NotFound(_) => EXIT_FAILURE,
            StoreError::Io { .. } => EXIT_TRANSPORT,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Validation(v) => CliError::new(EXIT_INVALID, violations_message(&v)),
            IngestError::InvalidArgument(_) => CliError::new(EXIT_INVALID, e.to_string()),
            IngestError::Transport { .. } => CliError::new(EXIT_TRANSPORT, e.to_string()),
            IngestError::Busy => CliError::new(EXIT_FAILURE, e.to_string()),
            IngestError::Registry(r) => r.into(),
        }
    }
}

impl From<SyncError> for CliError {
    fn from(e: SyncError) -> Self {
        match e {
            SyncError::InvalidArgument(_) => CliError::new(EXIT_INVALID, e.to_string()),
            SyncError::Locked(_) | SyncError::Io(_) => CliError::new(EXIT_FAILURE, e.to_string()),
            SyncError::Registry(r) => r.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidArgument(_) => CliError::new(EXIT_INVALID, e.to_string()),
            PipelineError::Registry(r) => r.into(),
        }
    }
}

/// A parsed backend URI.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    File(PathBuf),
    Http(String),
}

pub fn parse_uri(uri: &str) -> Result<Backend, CliError> {
    if let Some(path) = uri.strip_prefix("file://") {
        if path.is_empty() {
            return Err(CliError::new(EXIT_TRANSPORT, format!("backend uri {uri:?} has no path")));
        }
        return Ok(Backend::File(PathBuf::from(path)));
    }
    if uri.starts_with("http://") {
        return Ok(Backend::Http(uri.to_owned()));
    }
    Err(CliError::new(
        EXIT_TRANSPORT,
        format!("unsupported backend uri {uri:?}; expected file:// or http://"),
    ))
}

fn http_client(url: &str, token: Option<&str>) -> Result<HttpClient, CliError> {
    HttpClient::new(url, token.map(str::to_owned)).map_err(|e| CliError::new(EXIT_TRANSPORT, e.to_string()))
}

pub fn open_registry(uri: Option<&str>, token: Option<&str>) -> Result<Arc<dyn Registry>, CliError> {
    let uri = uri.ok_or_else(|| CliError::new(EXIT_INVALID, "no registry given; pass --registry or set EGODB_REGISTRY"))?;
    match parse_uri(uri)? {
        Backend::File(path) => Ok(Arc::new(SqliteRegistry::open(path)?)),
        Backend::Http(url) => Ok(Arc::new(HttpRegistry::new(http_client(&url, token)?))),
    }
}

pub fn open_store(uri: Option<&str>, token: Option<&str>) -> Result<Arc<dyn ObjectStore>, CliError> {
    let uri = uri.ok_or_else(|| CliError::new(EXIT_INVALID, "no store given; pass --store or set EGODB_STORE"))?;
    match parse_uri(uri)? {
        Backend::File(path) => Ok(Arc::new(FsStore::new(path)?)),
        Backend::Http(url) => Ok(Arc::new(HttpObjectStore::new(http_client(&url, token)?))),
    }
}

fn emit(line: impl fmt::Display) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn emit_json<T: Serialize + ?Sized>(value: &T) {
    emit(serde_json::to_string(value).expect("output serializes"));
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::new(EXIT_INVALID, format!("cannot read {}: {e}", path.display())))
}

pub async fn run(cli: Cli) -> Result<(), CliError> {
    let registry = || open_registry(cli.registry.as_deref(), cli.token.as_deref());
    let store = || open_store(cli.store.as_deref(), cli.token.as_deref());
    match cli.command {
        Command::Upload { raw, meta, nonce, json } => {
            let meta_bytes = read_file(&meta)?;
            let meta: UploadMetadata = serde_json::from_slice(&meta_bytes)
                .map_err(|e| CliError::new(EXIT_INVALID, format!("invalid metadata {}: {e}", meta.display())))?;
            let raw = read_file(&raw)?;
            let store = store()?;
            let nonce = nonce.unwrap_or_else(|| format!("cli-{}", std::process::id()));
            let manifest = upload_episode(store.as_ref(), raw, &meta, &nonce, now_ns()).await?;
            if json {
                emit_json(&manifest);
            } else {
                emit(&manifest.episode_hash);
            }
            Ok(())
        }
        Command::Scan { daemon, interval, json } => {
            let scanner = Arc::new(Scanner::new(store()?, registry()?));
            if !daemon {
                let report = scanner.scan_once().await?;
                if json {
                    emit_json(&report);
                } else {
                    emit(&report);
                }
                return if report.conflicts.is_empty() {
                    Ok(())
                } else {
                    Err(CliError::new(EXIT_FAILURE, format!("{} conflicting uploads", report.conflicts.len())))
                };
            }
            let (stop_tx, stop_rx) = watch::channel(false);
            tokio::spawn(async move {
                let _ = tokio::signal::ctrl_c().await;
                let _ = stop_tx.send(true);
            });
            run_daemon(scanner, interval, stop_rx, |result| match result {
                Ok(r) if json => emit_json(r),
                Ok(r) => emit(r),
                Err(e) => eprintln!("scan failed: {e}"),
            })
            .await?;
            Ok(())
        }
        Command::Serve { listen } => {
            let state = AppState {
                registry: registry()?,
                store: store()?,
                token: cli.token.clone(),
            };
            let listener = tokio::net::TcpListener::bind(listen)
                .await
                .map_err(|e| CliError::new(EXIT_TRANSPORT, format!("cannot listen on {listen}: {e}")))?;
            let addr = listener.local_addr().map_err(|e| CliError::new(EXIT_TRANSPORT, e.to_string()))?;
            emit(format!("listening on http://{addr}"));
            egodb_server::serve(listener, state, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::new(EXIT_TRANSPORT, e.to_string()))
        }
        Command::Process { parallel, retry_max, json } => {
            let (registry, store) = (registry()?, store()?);
            let opts = RoundOptions {
                max_parallel: parallel,
                retry: RetryPolicy { max_attempts: retry_max },
            };
            let summary = run_round(registry.as_ref(), store.as_ref(), &Adapters::default(), &opts).await?;
            if json {
                emit_json(&summary);
            } else {
                emit(&summary);
                for (hash, message) in &summary.failures {
                    eprintln!("{hash}: {message}");
                }
            }
            if summary.failed == 0 {
                Ok(())
            } else {
                Err(CliError::new(EXIT_FAILURE, format!("{} episodes failed", summary.failed)))
            }
        }
        Command::Query {
            filter,
            include_deleted,
            json,
        } => {
            let records = registry()?.query(&filter.filter(), include_deleted).await?;
            if json {
                emit_json(&records);
            } else if !records.is_empty() {
                emit(records_table(&records));
            }
            Ok(())
        }
        Command::Sync { config, json } => {
            let text = String::from_utf8(read_file(&config)?)
                .map_err(|_| CliError::new(EXIT_INVALID, format!("{} is not UTF-8", config.display())))?;
            let mut cfg = SyncConfig::from_toml(&text)?;
            if cfg.cache_dir.is_relative() {
                let base = config.parent().unwrap_or(Path::new("."));
                cfg.cache_dir = base.join(&cfg.cache_dir);
            }
            let registry = open_registry(cfg.registry.as_deref().or(cli.registry.as_deref()), cli.token.as_deref())?;
            let store = open_store(cfg.store.as_deref().or(cli.store.as_deref()), cli.token.as_deref())?;
            let (_, report) = run_sync(&cfg, registry.as_ref(), store.as_ref()).await?;
            if json {
                emit_json(&report);
            } else {
                emit(&report);
                for (hash, message) in &report.failures {
                    eprintln!("{hash}: {message}");
                }
            }
            if report.is_complete() {
                Ok(())
            } else {
                Err(CliError::new(EXIT_FAILURE, format!("{} episodes failed to sync", report.failed)))
            }
        }
        Command::Stats { group_by, json } => {
            let stats = registry()?.stats(group_by.into()).await?;
            if json {
                emit_json(&stats);
            } else {
                let rows: Vec<[String; 3]> = stats
                    .iter()
                    .map(|s| [s.group.clone(), s.episodes.to_string(), s.total_frames.to_string()])
                    .collect();
                emit(table(&[&GroupBy::from(group_by).to_string(), "episodes", "frames"], &rows));
            }
            Ok(())
        }
        Command::Score {
            points,
            max,
            episode,
            success,
        } => {
            let score = normalized_score(points, max).map_err(|e| CliError::new(EXIT_INVALID, e.to_string()))?;
            if let Some(hash) = episode {
                let success =
                    success.ok_or_else(|| CliError::new(EXIT_INVALID, "--success is required with --episode"))?;
                registry()?.record_eval(&hash, score, success).await?;
            }
            emit(score);
            Ok(())
        }
        Command::Selftest {
            suite,
            seed,
            inject_fault,
        } => {
            let report = match (suite, inject_fault) {
                (Suite::Align, None) => run_align_suite(seed),
                (Suite::Align, Some(_)) => {
                    return Err(CliError::new(EXIT_INVALID, "faults can only be injected into the flowmatch suite"))
                }
                (Suite::Flowmatch, None) => run_flowmatch_suite(seed, FlowFault::None),
                (Suite::Flowmatch, Some(Fault::SignFlip)) => run_flowmatch_suite(seed, FlowFault::EulerSignFlip),
            };
            emit(&report);
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::new(EXIT_FAILURE, format!("{} suite failed", report.suite)))
            }
        }
    }
}

fn status(r: &EpisodeRecord) -> &'static str {
    match (&r.processed_path, &r.processing_error) {
        (Some(_), _) => "processed",
        (None, Some(_)) => "failed",
        (None, None) => "pending",
    }
}

fn records_table(records: &[EpisodeRecord]) -> String {
    let rows: Vec<[String; 8]> = records
        .iter()
        .map(|r| {
            [
                r.episode_hash.clone(),
                r.lab.clone(),
                r.task.clone(),
                r.embodiment.to_string(),
                r.scene.clone(),
                r.num_frames.map(|n| n.to_string()).unwrap_or_else(|| "-".into()),
                status(r).into(),
                if r.is_deleted { "deleted".into() } else { String::new() },
            ]
        })
        .collect();
    table(&["hash", "lab", "task", "embodiment", "scene", "frames", "status", ""], &rows)
}

fn table<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths: [usize; N] = header.map(str::len);
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_owned()
    };
    let mut out = vec![line(header.to_vec())];
    out.extend(rows.iter().map(|r| line(r.iter().map(String::as_str).collect())));
    out.join("\n")
}
