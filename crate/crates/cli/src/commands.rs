//! Subcommand implementations.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result, anyhow, bail};
use schemalink_core::LinkSource;
use schemalink_core::evaluation::{EvalOptions, MetricFilter, build_report};
use schemalink_core::llm_client::{CompletionBackend, LiveBackend, LiveConfig, ReplayBackend, ResponseCache};
use schemalink_core::pipeline::{Checkpoint, Pipeline, read_traces};
use schemalink_core::prompting::PromptTemplates;
use schemalink_core::schema::{
    DatabaseSchema, DbResolver, LinkingSchema, QuestionRecord, SchemaIndex, load_questions,
    load_spider_tables, schema_from_sqlite,
};
use schemalink_core::sql_parse::{gold_labels as gold_linking, link_sql};
use serde::Serialize;

use crate::UsageError;
use crate::config::{AppConfig, BackendMode};

/// Question and schema files of a dataset.
pub struct Dataset {
    pub questions: PathBuf,
    pub tables: PathBuf,
}

impl Dataset {
    pub fn new(cfg: &AppConfig, questions: Option<PathBuf>, tables: Option<PathBuf>) -> Self {
        Self {
            questions: questions.unwrap_or_else(|| cfg.data_root.join("dev.json")),
            tables: tables.unwrap_or_else(|| cfg.data_root.join("tables.json")),
        }
    }

    fn load(&self) -> Result<(Vec<QuestionRecord>, SchemaIndex)> {
        let schemas = load_spider_tables(&self.tables).context("cannot load database schemas")?;
        let records = load_questions(&self.questions).context("cannot load questions")?;
        Ok((records, SchemaIndex::new(schemas)))
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Linking schema as `{table: [columns in schema order]}`.
fn linking_json(linking: &LinkingSchema, schema: &DatabaseSchema) -> serde_json::Value {
    let mut out = serde_json::Map::new();
    for table in schema.tables() {
        if let Some(cols) = linking.entries.get(&table.name) {
            let ordered: Vec<&str> = table
                .columns
                .iter()
                .filter(|c| cols.contains(&c.name))
                .map(|c| c.name.as_str())
                .collect();
            out.insert(table.name.clone(), ordered.into());
        }
    }
    out.into()
}

pub fn link(cfg: &AppConfig, db: &str, sql: Option<&str>, schema_path: Option<&Path>) -> Result<()> {
    let schema = match schema_path {
        Some(path) if matches!(path.extension().and_then(|e| e.to_str()), Some("sqlite" | "db")) => {
            schema_from_sqlite(path).context("cannot read database schema")?
        }
        other => {
            let path = other.map_or_else(|| cfg.data_root.join("tables.json"), Path::to_path_buf);
            let index = SchemaIndex::new(load_spider_tables(&path).context("cannot load database schemas")?);
            index
                .get(db)
                .cloned()
                .ok_or_else(|| usage(format!("unknown database {db:?} in {}", path.display())))?
        }
    };
    let sql = match sql {
        Some(s) => s.to_string(),
        None => {
            let mut buf = String::new();
            io::stdin()
                .read_to_string(&mut buf)
                .context("cannot read SQL from stdin")?;
            buf
        }
    };
    let extracted = link_sql(&sql, &schema, LinkSource::Gold);
    if extracted.fallback_used {
        tracing::warn!("SQL did not parse; tables were matched by token");
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&linking_json(&extracted.linking, &schema))?
    );
    Ok(())
}

pub struct RunOptions {
    pub resume: bool,
    pub limit: Option<usize>,
    pub questions: Option<String>,
}

/// Parses `0,4,10-19` into a set of ids.
fn parse_id_list(spec: &str) -> Result<BTreeSet<usize>> {
    let mut ids = BTreeSet::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || usage(format!("invalid question id list entry {part:?}"));
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                ids.extend(lo..=hi);
            }
            None => {
                ids.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    Ok(ids)
}

fn select(records: Vec<QuestionRecord>, opts: &RunOptions) -> Result<Vec<QuestionRecord>> {
    let mut selected = match &opts.questions {
        Some(spec) => {
            let ids = parse_id_list(spec)?;
            if let Some(missing) = ids.iter().find(|id| **id >= records.len()) {
                return Err(usage(format!(
                    "question id {missing} out of range ({} questions)",
                    records.len()
                )));
            }
            records
                .into_iter()
                .filter(|r| ids.contains(&r.question_id))
                .collect()
        }
        None => records,
    };
    if let Some(n) = opts.limit {
        selected.truncate(n);
    }
    Ok(selected)
}

fn backend(cfg: &AppConfig) -> Result<Box<dyn CompletionBackend>> {
    let b = &cfg.backend;
    match b.mode {
        BackendMode::Replay => {
            let path = b.fixture.as_ref().expect("validated");
            let replay = ReplayBackend::open(path).context("cannot load replay fixture")?;
            tracing::info!(
                "replaying {} recorded responses from {}",
                replay.len(),
                path.display()
            );
            Ok(Box::new(replay))
        }
        BackendMode::Live => {
            let key = cfg.api_key()?;
            let cache = match &cfg.paths.cache {
                Some(path) => Some(ResponseCache::open(path).context("cannot open response cache")?),
                None => None,
            };
            let live = LiveConfig {
                retries: b.retries,
                timeout: Duration::from_millis(b.timeout_ms),
                ..LiveConfig::new(&b.base_url, key)
            };
            Ok(Box::new(LiveBackend::new(live, cache)?))
        }
    }
}

pub fn run(cfg: &AppConfig, dataset: &Dataset, opts: &RunOptions) -> Result<()> {
    cfg.validate()?;
    let (records, schemas) = dataset.load()?;
    let records = select(records, opts)?;
    let backend = backend(cfg)?;
    let templates = match &cfg.paths.templates {
        Some(dir) => PromptTemplates::load_dir(dir)?,
        None => PromptTemplates::default(),
    };
    let resolver = DbResolver::new(&cfg.data_root);
    let run_config = cfg.run_config();
    let pipeline = Pipeline {
        backend: backend.as_ref(),
        templates: &templates,
        resolver: &resolver,
        config: &run_config,
    };
    let checkpoint = Checkpoint::open(&cfg.paths.checkpoint, opts.resume)?;
    let traces = pipeline.run_dataset(&records, &schemas, Some(&checkpoint))?;
    let failed = traces
        .iter()
        .flat_map(|t| &t.rounds)
        .filter(|r| r.error.is_some())
        .count();
    println!(
        "{} questions run, traces in {} ({failed} failed LLM calls)",
        traces.len(),
        cfg.paths.checkpoint.display()
    );
    Ok(())
}

pub fn eval(cfg: &AppConfig, dataset: &Dataset, filter: MetricFilter, csv: Option<&Path>) -> Result<()> {
    let path = &cfg.paths.checkpoint;
    if !path.is_file() {
        bail!("no traces at {}; run `schemalink run` first", path.display());
    }
    let traces = read_traces(path)?;
    let (records, schemas) = dataset.load()?;
    let by_id: HashMap<usize, &QuestionRecord> = records.iter().map(|r| (r.question_id, r)).collect();
    let aligned = traces
        .iter()
        .map(|t| {
            by_id
                .get(&t.question_id)
                .map(|r| (*r).clone())
                .ok_or_else(|| anyhow!("trace for question {} has no matching question", t.question_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let rounds = traces
        .iter()
        .flat_map(|t| t.rounds.iter().map(|r| r.round))
        .max()
        .unwrap_or(cfg.pipeline.rounds);
    let opts = EvalOptions {
        rounds,
        exec_timeout_ms: cfg.exec_timeout_ms,
    };
    let resolver = DbResolver::new(&cfg.data_root);
    let report = build_report(&traces, &aligned, &schemas, &resolver, &opts)?;
    write_output(&cfg.paths.report_out, &report.to_json())?;
    if let Some(csv) = csv {
        write_output(csv, &report.verdicts.to_csv())?;
    }
    print!("{}", report.summary_table(filter));
    println!("report written to {}", cfg.paths.report_out.display());
    Ok(())
}

#[derive(Serialize)]
struct GoldLine<'a> {
    question_id: usize,
    #[serde(flatten)]
    linking: &'a LinkingSchema,
}

pub fn gold_labels(dataset: &Dataset, out: Option<&Path>) -> Result<()> {
    let (records, schemas) = dataset.load()?;
    let mut text = String::new();
    for record in &records {
        let schema = schemas.get(&record.db_id).ok_or_else(|| {
            anyhow!(
                "question {} names unknown database {}",
                record.question_id,
                record.db_id
            )
        })?;
        let linking = gold_linking(record, schema);
        text.push_str(&serde_json::to_string(&GoldLine {
            question_id: record.question_id,
            linking: &linking,
        })?);
        text.push('\n');
    }
    match out {
        Some(path) => write_output(path, &text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
