// Copyright 2026 The Skyjoin Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


//! `skyjoin`: run and inspect cross-match queries from the command line.

mod config;
mod registry;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;
use thiserror::Error;

use config::{CliConfig, ConfigError, Overrides, Partitions};
use registry::{JobRecord, JobRegistry};
use skyjoin::executor::{output_path, ExecOptions, JobError};
use skyjoin::planner::{compile, gather_stats, ExecutionPlan, PlanError};
use skyjoin::query::{parse_query, resolve, ParseError, ResolveError, ResolvedQuery};
use skyjoin::queue::{JobQueues, JobSpec, JobState, QueueConfig, QueueKind};
use skyjoin::store::{load_registry, sample_mini, CatalogRegistry, MiniCatalog, StoreError};

#[derive(Parser)]
#[command(name = "skyjoin", version, about = "Probabilistic cross-match of astronomical catalogs")]
#[command(args_override_self = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Settings file (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Catalog config file.
    #[arg(long, global = true, value_name = "FILE")]
    catalogs: Option<PathBuf>,
    /// Directory for results, minis and job records.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<i64>,
    /// Partition count or "auto" (4 per worker).
    #[arg(long, global = true)]
    partitions: Option<Partitions>,
    #[arg(long, global = true)]
    sample_rate: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seconds.
    #[arg(long, global = true)]
    quick_timeout: Option<f64>,
    /// Seconds.
    #[arg(long, global = true)]
    long_timeout: Option<f64>,
    #[arg(long, global = true)]
    max_retries: Option<i64>,
}

#[derive(Args)]
struct QueryArgs {
    /// File holding the query.
    #[arg(value_name = "QUERY_FILE", required_unless_present = "query")]
    file: Option<PathBuf>,
    /// Query text given inline.
    #[arg(long, conflicts_with = "file")]
    query: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueueArg {
    Quick,
    Long,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a query and write its result table as CSV.
    Run {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, value_enum, default_value = "long")]
        queue: QueueArg,
        /// Order rows by detection keys for reproducible files.
        #[arg(long)]
        sort_output: bool,
    },
    /// Print the execution plan of a query.
    Explain {
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Draw and store a mini catalog for planning statistics.
    Sample {
        #[arg(long)]
        dataset: String,
        /// Defaults to the configured sample_rate.
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Show one job, or all jobs.
    Status { id: Option<u64> },
    /// Ask a running or queued job to stop.
    Cancel { id: u64 },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("job {id} failed: {reason}")]
    JobFailed { id: u64, reason: String },
    #[error("job {id} timed out after {after:?}")]
    JobTimedOut { id: u64, after: Duration },
    #[error("job {0} was cancelled")]
    JobCancelled(u64),
    #[error("unknown job {0}")]
    UnknownJob(u64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Store(_) => "StoreError",
            CliError::Parse(ParseError::Lex(_)) => "LexError",
            CliError::Parse(ParseError::Syntax(_)) => "SyntaxError",
            CliError::Resolve(_) | CliError::UnknownDataset(_) => "ResolveError",
            CliError::Plan(_) => "PlanError",
            CliError::JobFailed { .. } => "JobFailed",
            CliError::JobTimedOut { .. } => "JobTimedOut",
            CliError::JobCancelled(_) => "JobCancelled",
            CliError::UnknownJob(_) => "UnknownJob",
            CliError::Io { .. } => "IoError",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Store(_) => 3,
            CliError::Parse(_) => 4,
            CliError::Resolve(_) | CliError::UnknownDataset(_) => 5,
            CliError::Plan(_) => 6,
            CliError::JobFailed { .. } => 7,
            CliError::JobTimedOut { .. } => 8,
            CliError::JobCancelled(_) => 9,
            CliError::UnknownJob(_) => 10,
            CliError::Io { .. } => 11,
        }
    }

    /// One JSON object on a single line.
    fn machine_line(&self) -> String {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Parse(e) = self {
            let p = e.position();
            v["line"] = json!(p.line);
            v["column"] = json!(p.column);
        }
        match self {
            CliError::JobFailed { id, .. } | CliError::JobTimedOut { id, .. } => v["job"] = json!(id),
            CliError::JobCancelled(id) | CliError::UnknownJob(id) => v["job"] = json!(id),
            _ => {}
        }
        v.to_string()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let line = json!({"error": "UsageError", "exit_code": 2, "message": e.kind().to_string()});
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let flags = Overrides {
        catalogs: g.catalogs,
        output_dir: g.output_dir,
        workers: g.workers,
        partitions: g.partitions,
        sample_rate: g.sample_rate,
        seed: g.seed,
        quick_timeout: g.quick_timeout,
        long_timeout: g.long_timeout,
        max_retries: g.max_retries,
    };
    let cfg = CliConfig::load(g.config.as_deref(), &flags)?;
    match cli.command {
        Command::Run { query, queue, sort_output } => cmd_run(&cfg, &query, queue, sort_output),
        Command::Explain { query } => {
            let (_, plan) = prepare(&cfg, &read_query(&query)?)?;
            print!("{plan}");
            Ok(())
        }
        Command::Sample { dataset, rate } => cmd_sample(&cfg, &dataset, rate.unwrap_or(cfg.sample_rate)),
        Command::Status { id } => cmd_status(&cfg, id),
        Command::Cancel { id } => cmd_cancel(&cfg, id),
    }
}

fn read_query(args: &QueryArgs) -> Result<String, CliError> {
    match (&args.query, &args.file) {
        (Some(text), _) => Ok(text.clone()),
        (None, Some(path)) => std::fs::read_to_string(path).map_err(|e| CliError::io(path, e)),
        (None, None) => unreachable!("clap requires a query"),
    }
}

fn prepare(cfg: &CliConfig, text: &str) -> Result<(ResolvedQuery, ExecutionPlan), CliError> {
    let catalogs = load_registry(&cfg.catalogs)?;
    let ast = parse_query(text)?;
    let rq = resolve(&ast, &catalogs)?;
    let minis = load_minis(cfg, &rq)?;
    let plan = compile(&rq, gather_stats(&rq, &minis), cfg.partition_count())?;
    Ok((rq, plan))
}

fn load_minis(cfg: &CliConfig, rq: &ResolvedQuery) -> Result<Vec<MiniCatalog>, CliError> {
    let dir = cfg.minis_dir();
    let mut minis = Vec::new();
    if !dir.is_dir() {
        return Ok(minis);
    }
    for s in &rq.sources {
        let schema = s.table.schema();
        if minis.iter().any(|m: &MiniCatalog| m.dataset == schema.dataset && m.table == schema.table) {
            continue;
        }
        if let Some(m) = MiniCatalog::load(&dir, schema)? {
            info!("using mini {}:{} ({} rows, rate {})", m.dataset, m.table, m.rows.row_count(), m.sample_rate);
            minis.push(m);
        }
    }
    Ok(minis)
}

fn cmd_run(cfg: &CliConfig, args: &QueryArgs, queue: QueueArg, sort_output: bool) -> Result<(), CliError> {
    let text = read_query(args)?;
    let (rq, plan) = prepare(cfg, &text)?;
    if let Some(reason) = &plan.empty {
        info!("plan is empty: {reason}");
    }
    let kind = match queue {
        QueueArg::Quick => QueueKind::Quick,
        QueueArg::Long => QueueKind::Long,
    };
    let jobs_dir = cfg.jobs_dir();
    let registry = JobRegistry::open(&jobs_dir).map_err(|e| CliError::io(&jobs_dir, e))?;
    let mut record = registry
        .allocate(&kind.to_string(), &text)
        .map_err(|e| CliError::io(&jobs_dir, e))?;
    let id = record.id;
    let queues = JobQueues::starting_at(
        QueueConfig { timeout: Some(cfg.quick_timeout), concurrency: 1 },
        QueueConfig { timeout: Some(cfg.long_timeout), concurrency: 1 },
        id,
    );
    let rq = Arc::new(rq);
    let spec = JobSpec {
        query: rq.clone(),
        plan: Arc::new(plan),
        options: ExecOptions {
            workers: cfg.workers,
            max_retries: cfg.max_retries,
            ..Default::default()
        },
    };
    let submitted = queues.submit(spec, kind);
    debug_assert_eq!(submitted, id);

    let save = |record: &JobRecord| registry.save(record).map_err(|e| CliError::io(&jobs_dir, e));
    let mut seen = JobState::Queued;
    loop {
        if registry.cancel_requested(id) {
            let _ = queues.cancel(id);
        }
        let state = queues.status(id).map_err(|_| CliError::UnknownJob(id))?;
        if state != seen && !state.is_terminal() {
            record.state = state.to_string();
            save(&record)?;
            seen = state;
        }
        if state.is_terminal() {
            break;
        }
        thread::sleep(Duration::from_millis(20));
    }
    registry.clear_cancel(id);
    let outcome = queues.wait(id).map_err(|_| CliError::UnknownJob(id))?;
    let finished = queues.status(id).map_err(|_| CliError::UnknownJob(id))?;
    record.state = finished.to_string();

    let mut table = match outcome {
        Ok(t) => t,
        Err(e) => {
            record.error = Some(e.to_string());
            save(&record)?;
            return Err(match e {
                JobError::TimedOut(after) => CliError::JobTimedOut { id, after },
                JobError::Cancelled => CliError::JobCancelled(id),
                other => CliError::JobFailed { id, reason: other.to_string() },
            });
        }
    };
    if sort_output {
        table.sort_by_keys(&rq);
    }
    let path = output_path(&cfg.output_dir, &rq).unwrap_or_else(|| cfg.output_dir.join(format!("job_{id}.csv")));
    if let Err(e) = table.write_csv(&path) {
        record.state = JobState::Failed.to_string();
        record.error = Some(e.to_string());
        save(&record)?;
        return Err(e.into());
    }
    record.rows = Some(table.rows.len());
    record.output = Some(path.clone());
    save(&record)?;
    println!("job {id} {finished}: {} rows written to {}", table.rows.len(), path.display());
    Ok(())
}

fn cmd_sample(cfg: &CliConfig, dataset: &str, rate: f64) -> Result<(), CliError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(ConfigError::Invalid { name: "rate", reason: format!("must be in (0, 1], got {rate}") }.into());
    }
    let catalogs: CatalogRegistry = load_registry(&cfg.catalogs)?;
    let tables: Vec<_> = catalogs
        .tables()
        .filter(|t| t.schema().dataset.eq_ignore_ascii_case(dataset))
        .cloned()
        .collect();
    if tables.is_empty() {
        return Err(CliError::UnknownDataset(dataset.into()));
    }
    let dir = cfg.minis_dir();
    for t in tables {
        let mini = sample_mini(&t, rate, cfg.seed);
        mini.save(&dir)?;
        println!(
            "sampled {} of {} rows from {} at rate {rate} (seed {}) into {}",
            mini.rows.row_count(),
            t.row_count(),
            t.schema().qualified_name(),
            cfg.seed,
            MiniCatalog::csv_path(&dir, &mini.dataset, &mini.table).display()
        );
    }
    Ok(())
}

fn describe(r: &JobRecord) -> String {
    let mut line = format!("{} {} {}", r.id, r.state, r.queue);
    if let Some(n) = r.rows {
        line.push_str(&format!(" rows={n}"));
    }
    if let Some(o) = &r.output {
        line.push_str(&format!(" output={}", o.display()));
    }
    if let Some(e) = &r.error {
        line.push_str(&format!(" error={e:?}"));
    }
    line
}

fn open_registry(cfg: &CliConfig) -> Result<JobRegistry, CliError> {
    let dir = cfg.jobs_dir();
    JobRegistry::open(&dir).map_err(|e| CliError::io(&dir, e))
}

fn load_record(reg: &JobRegistry, cfg: &CliConfig, id: u64) -> Result<JobRecord, CliError> {
    reg.load(id)
        .map_err(|e| CliError::io(&cfg.jobs_dir(), e))?
        .ok_or(CliError::UnknownJob(id))
}

fn cmd_status(cfg: &CliConfig, id: Option<u64>) -> Result<(), CliError> {
    let reg = open_registry(cfg)?;
    let ids = match id {
        Some(id) => vec![id],
        None => reg.ids().map_err(|e| CliError::io(&cfg.jobs_dir(), e))?,
    };
    for id in ids {
        println!("{}", describe(&load_record(&reg, cfg, id)?));
    }
    Ok(())
}

fn cmd_cancel(cfg: &CliConfig, id: u64) -> Result<(), CliError> {
    let reg = open_registry(cfg)?;
    let record = load_record(&reg, cfg, id)?;
    if matches!(record.state.as_str(), "Completed" | "Failed" | "Cancelled") {
        println!("{id} {} (already finished)", record.state);
        return Ok(());
    }
    reg.request_cancel(id).map_err(|e| CliError::io(&cfg.jobs_dir(), e))?;
    println!("{id} cancel requested");
    Ok(())
}
