//! `schemalink`: schema linking by SQL parsing, from the command line.
//!
//! Exit status is 0 on success, 1 on setup or infrastructure failure and 2 on
//! usage errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{BackendMode, Overrides};

#[derive(Debug, Parser)]
#[command(
    name = "schemalink",
    version,
    about = "Schema linking for text-to-SQL by parsing generated SQL"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "SCHEMALINK_CONFIG")]
    config: Option<PathBuf>,
    /// Dataset root holding tables.json, dev.json and database/.
    #[arg(long, global = true, env = "SCHEMALINK_DATA_ROOT")]
    data_root: Option<PathBuf>,
    /// Log progress and diagnostics at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the linking schema of one SQL query as JSON.
    Link(LinkArgs),
    /// Run the generation pipeline over a dataset.
    Run(Box<RunArgs>),
    /// Score a finished run.
    Eval(EvalArgs),
    /// Write the gold linking schema of every question as JSONL.
    GoldLabels(GoldArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Question file [default: <data-root>/dev.json].
    #[arg(long, env = "SCHEMALINK_QUESTIONS")]
    questions_file: Option<PathBuf>,
    /// Schema file [default: <data-root>/tables.json].
    #[arg(long, env = "SCHEMALINK_TABLES")]
    tables: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LinkArgs {
    /// Database id to link against.
    #[arg(long)]
    db: String,
    /// SQL text; read from stdin when absent.
    #[arg(long)]
    sql: Option<String>,
    /// tables.json or a .sqlite file [default: <data-root>/tables.json].
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, value_enum, env = "SCHEMALINK_MODE")]
    mode: Option<BackendMode>,
    /// Replay file of recorded responses.
    #[arg(long, env = "SCHEMALINK_FIXTURE")]
    fixture: Option<PathBuf>,
    #[arg(long, env = "SCHEMALINK_BASE_URL")]
    base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, env = "SCHEMALINK_API_KEY_ENV")]
    api_key_env: Option<String>,
    #[arg(long, env = "SCHEMALINK_MODEL")]
    model: Option<String>,
    #[arg(long, env = "SCHEMALINK_TEMPERATURE")]
    temperature: Option<f64>,
    #[arg(long, env = "SCHEMALINK_MAX_TOKENS")]
    max_tokens: Option<u32>,
    #[arg(long, env = "SCHEMALINK_RETRIES")]
    retries: Option<u32>,
    #[arg(long, env = "SCHEMALINK_TIMEOUT_MS")]
    timeout_ms: Option<u64>,
    /// Refinement rounds after the initial generation.
    #[arg(long, env = "SCHEMALINK_ROUNDS")]
    rounds: Option<u32>,
    /// Rounds taking part in the vote, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',', env = "SCHEMALINK_SCV_CANDIDATES")]
    scv_candidates: Option<Vec<u32>>,
    #[arg(long, env = "SCHEMALINK_WORKERS")]
    workers: Option<usize>,
    #[arg(long, env = "SCHEMALINK_EXEC_TIMEOUT_MS")]
    exec_timeout_ms: Option<u64>,
    /// Live-mode response cache file.
    #[arg(long, env = "SCHEMALINK_CACHE")]
    cache: Option<PathBuf>,
    /// Do not read or write the response cache.
    #[arg(long)]
    no_cache: bool,
    /// Trace file (JSONL).
    #[arg(long, env = "SCHEMALINK_CHECKPOINT")]
    checkpoint: Option<PathBuf>,
    /// Directory with isg.txt and sg.txt prompt templates.
    #[arg(long, env = "SCHEMALINK_TEMPLATES")]
    templates: Option<PathBuf>,
    /// Keep traces already in the checkpoint and run only the rest.
    #[arg(long)]
    resume: bool,
    /// Run only the first N selected questions.
    #[arg(long)]
    limit: Option<usize>,
    /// Question ids to run, e.g. `0,4,10-19`.
    #[arg(long)]
    questions: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    All,
    Ea,
    Recall,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Trace file produced by `run`.
    #[arg(long, env = "SCHEMALINK_CHECKPOINT")]
    checkpoint: Option<PathBuf>,
    /// Where to write the report JSON.
    #[arg(long, env = "SCHEMALINK_REPORT")]
    out: Option<PathBuf>,
    #[arg(long, env = "SCHEMALINK_EXEC_TIMEOUT_MS")]
    exec_timeout_ms: Option<u64>,
    #[arg(long, value_enum, default_value = "all")]
    metric: Metric,
    /// Also write per-question verdicts as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GoldArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error caused by how the command was invoked rather than by the environment.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_max_level(if cli.verbose {
            tracing::Level::DEBUG
        } else {
            tracing::Level::INFO
        })
        .init();

    let mut overrides = Overrides {
        data_root: cli.data_root.clone(),
        ..Overrides::default()
    };
    let result = match cli.command {
        Command::Link(args) => config::load(cli.config.as_deref(), &overrides)
            .and_then(|cfg| commands::link(&cfg, &args.db, args.sql.as_deref(), args.schema.as_deref())),
        Command::Run(args) => {
            let args = *args;
            overrides = Overrides {
                mode: args.mode,
                fixture: args.fixture,
                base_url: args.base_url,
                api_key_env: args.api_key_env,
                model: args.model,
                temperature: args.temperature,
                max_tokens: args.max_tokens,
                retries: args.retries,
                timeout_ms: args.timeout_ms,
                rounds: args.rounds,
                scv_candidates: args.scv_candidates,
                worker_count: args.workers,
                exec_timeout_ms: args.exec_timeout_ms,
                cache: args.cache,
                no_cache: args.no_cache,
                checkpoint: args.checkpoint,
                templates: args.templates,
                ..overrides
            };
            config::load(cli.config.as_deref(), &overrides).and_then(|cfg| {
                commands::run(
                    &cfg,
                    &commands::Dataset::new(&cfg, args.dataset.questions_file, args.dataset.tables),
                    &commands::RunOptions {
                        resume: args.resume,
                        limit: args.limit,
                        questions: args.questions,
                    },
                )
            })
        }
        Command::Eval(args) => {
            overrides = Overrides {
                checkpoint: args.checkpoint,
                report_out: args.out,
                exec_timeout_ms: args.exec_timeout_ms,
                ..overrides
            };
            config::load(cli.config.as_deref(), &overrides).and_then(|cfg| {
                let filter = match args.metric {
                    Metric::All => schemalink_core::evaluation::MetricFilter::All,
                    Metric::Ea => schemalink_core::evaluation::MetricFilter::Accuracy,
                    Metric::Recall => schemalink_core::evaluation::MetricFilter::Recall,
                };
                commands::eval(
                    &cfg,
                    &commands::Dataset::new(&cfg, args.dataset.questions_file, args.dataset.tables),
                    filter,
                    args.csv.as_deref(),
                )
            })
        }
        Command::GoldLabels(args) => config::load(cli.config.as_deref(), &overrides).and_then(|cfg| {
            commands::gold_labels(
                &commands::Dataset::new(&cfg, args.dataset.questions_file, args.dataset.tables),
                args.out.as_deref(),
            )
        }),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
