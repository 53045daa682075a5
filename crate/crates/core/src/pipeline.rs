//! Per-question generation loop and dataset runner.
//!
//! A question goes through an initial generation from the complete schema
//! (SQL0), then `rounds` refinements: the previous SQL is parsed into a
//! linking schema (Schema k) that is handed back as a reference to produce
//! SQL k. The candidates are finally put to a vote by execution result.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::{ExecErrorKind, ResultTable, execute_sql, results_match};
use crate::llm_client::{CompletionBackend, CompletionRequest, ResultSource, TokenUsage, extract_sql};
use crate::prompting::{Prompt, PromptTemplates, TemplateId};
use crate::schema::{DatabaseSchema, DbResolver, LinkSource, LinkingSchema, QuestionRecord, SchemaIndex};
use crate::sql_parse::link_sql;

/// A source of final SQL: one generation round or the vote over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Round(u32),
    Scv,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Round(k) => format!("SQL{k}"),
            Strategy::Scv => "SCVSQL".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Number of refinement rounds after the initial generation.
    pub rounds: u32,
    /// Rounds whose SQL takes part in the vote.
    pub scv_candidates: Vec<u32>,
    pub worker_count: usize,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub exec_timeout_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            scv_candidates: vec![0, 1, 2],
            worker_count: 4,
            model: "gpt-4-turbo".to_string(),
            temperature: 0.0,
            max_tokens: 512,
            exec_timeout_ms: crate::evaluation::DEFAULT_EXEC_TIMEOUT_MS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.rounds < 1 {
            return Err(PipelineError::Config("rounds must be at least 1".into()));
        }
        if self.worker_count < 1 {
            return Err(PipelineError::Config("worker_count must be at least 1".into()));
        }
        if let Some(bad) = self.scv_candidates.iter().find(|&&r| r > self.rounds) {
            return Err(PipelineError::Config(format!(
                "vote candidate round {bad} exceeds rounds = {}",
                self.rounds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub template: TemplateId,
    /// Request key of the completion call; absent if no request was built.
    pub prompt_key: Option<String>,
    pub raw_text: Option<String>,
    pub sql: Option<String>,
    pub source: Option<ResultSource>,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
    pub error: Option<String>,
}

/// Linking schema `index` (Schema k), parsed from the SQL of round `parsed_from`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaRecord {
    pub index: u32,
    pub parsed_from: u32,
    pub table_count: usize,
    pub fallback_used: bool,
    pub linking: LinkingSchema,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub question_id: usize,
    pub db_id: String,
    pub rounds: Vec<RoundRecord>,
    pub schemas: Vec<SchemaRecord>,
    pub scv_sql: Option<String>,
    pub scv_round: Option<u32>,
    pub notes: Vec<String>,
}

impl PipelineTrace {
    pub fn sql(&self, round: u32) -> Option<&str> {
        self.rounds
            .iter()
            .find(|r| r.round == round)
            .and_then(|r| r.sql.as_deref())
    }

    /// Linking schema `index` (Schema k, k >= 1).
    pub fn schema(&self, index: u32) -> Option<&LinkingSchema> {
        self.schemas.iter().find(|s| s.index == index).map(|s| &s.linking)
    }

    pub fn sql_for(&self, strategy: Strategy) -> Option<&str> {
        match strategy {
            Strategy::Round(k) => self.sql(k),
            Strategy::Scv => self.scv_sql.as_deref(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("question {question_id} names unknown database {db_id:?}")]
    UnknownDatabase { question_id: usize, db_id: String },
    #[error("database file {0} does not exist")]
    MissingDatabase(PathBuf),
    #[error("no candidates to vote on")]
    NoCandidates,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// The winning vote candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub round: u32,
    pub sql: String,
}

/// Picks the candidate whose execution result is shared by the most candidates.
///
/// Candidates are grouped by unordered result equality, skipping those that
/// fail to execute. Among equally large groups the one holding the latest
/// round wins, and its latest-round member is returned. If every candidate
/// fails, the latest round is returned.
pub fn self_consistency_vote(
    candidates: &[(u32, String)],
    db_path: &Path,
    timeout_ms: u64,
) -> Result<Vote, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    if !db_path.is_file() {
        return Err(PipelineError::MissingDatabase(db_path.to_path_buf()));
    }
    let mut ordered: Vec<&(u32, String)> = candidates.iter().collect();
    ordered.sort_by_key(|(round, _)| *round);

    let mut results: BTreeMap<&str, Option<ResultTable>> = BTreeMap::new();
    for (_, sql) in &ordered {
        if results.contains_key(sql.as_str()) {
            continue;
        }
        let outcome = match execute_sql(db_path, sql, timeout_ms) {
            Ok(t) => Some(t),
            Err(e) if e.kind == ExecErrorKind::Unavailable => {
                return Err(PipelineError::MissingDatabase(db_path.to_path_buf()));
            }
            Err(_) => None,
        };
        results.insert(sql.as_str(), outcome);
    }

    // Each group: (representative result, member indices into `ordered`).
    let mut groups: Vec<(&ResultTable, Vec<usize>)> = Vec::new();
    for (i, (_, sql)) in ordered.iter().enumerate() {
        let Some(table) = results[sql.as_str()].as_ref() else {
            continue;
        };
        match groups
            .iter_mut()
            .find(|(rep, _)| results_match(table, rep, false))
        {
            Some((_, members)) => members.push(i),
            None => groups.push((table, vec![i])),
        }
    }
    let winner = groups
        .iter()
        .map(|(_, members)| (members.len(), *members.last().expect("non-empty group")))
        .max()
        .map(|(_, latest)| latest)
        .unwrap_or(ordered.len() - 1);
    let (round, sql) = ordered[winner];
    Ok(Vote {
        round: *round,
        sql: sql.clone(),
    })
}

/// Everything a run needs besides the questions themselves.
pub struct Pipeline<'a> {
    pub backend: &'a dyn CompletionBackend,
    pub templates: &'a PromptTemplates,
    pub resolver: &'a DbResolver,
    pub config: &'a RunConfig,
}

impl Pipeline<'_> {
    fn call(&self, prompt: &Prompt) -> RoundRecord {
        let req = CompletionRequest::from_prompt(
            &self.config.model,
            prompt,
            self.config.temperature,
            self.config.max_tokens,
        );
        let mut record = RoundRecord {
            round: prompt.round,
            template: prompt.template_id,
            prompt_key: Some(req.request_key()),
            raw_text: None,
            sql: None,
            source: None,
            latency_ms: 0,
            usage: None,
            error: None,
        };
        match self.backend.complete(&req) {
            Ok(res) => {
                record.sql = Some(extract_sql(&res.raw_text));
                record.raw_text = Some(res.raw_text);
                record.source = Some(res.source);
                record.latency_ms = res.latency_ms;
                record.usage = res.usage;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    }

    /// Runs one question end to end. Failures are recorded in the trace.
    pub fn run_question(&self, record: &QuestionRecord, schema: &DatabaseSchema) -> PipelineTrace {
        let mut trace = PipelineTrace {
            question_id: record.question_id,
            db_id: record.db_id.clone(),
            rounds: Vec::new(),
            schemas: Vec::new(),
            scv_sql: None,
            scv_round: None,
            notes: Vec::new(),
        };

        let initial = self.call(&self.templates.build_initial_prompt(schema, &record.question));
        let Some(sql0) = initial.sql.clone() else {
            trace.notes.push(format!(
                "SQL0 failed: {}",
                initial.error.as_deref().unwrap_or("unknown")
            ));
            trace.rounds.push(initial);
            return trace;
        };
        trace.rounds.push(initial);

        let mut last_good = (0u32, sql0);
        for k in 1..=self.config.rounds {
            let (from, ref sql) = last_good;
            let extracted = link_sql(sql, schema, LinkSource::Round(from));
            if extracted.fallback_used {
                trace.notes.push(format!(
                    "SQL{from} did not parse; Schema{k} tables matched by token"
                ));
            }
            if extracted.linking.is_empty() {
                trace
                    .notes
                    .push(format!("Schema{k} is empty: no schema tables found in SQL{from}"));
            }
            let linking = extracted.linking;
            trace.schemas.push(SchemaRecord {
                index: k,
                parsed_from: from,
                table_count: linking.table_count(),
                fallback_used: extracted.fallback_used,
                linking: linking.clone(),
            });

            let round = match self
                .templates
                .build_refine_prompt(schema, &linking, &record.question, k)
            {
                Ok(prompt) => self.call(&prompt),
                Err(e) => RoundRecord {
                    round: k,
                    template: TemplateId::Sg,
                    prompt_key: None,
                    raw_text: None,
                    sql: None,
                    source: None,
                    latency_ms: 0,
                    usage: None,
                    error: Some(e.to_string()),
                },
            };
            match &round.sql {
                Some(sql) => last_good = (k, sql.clone()),
                None => trace.notes.push(format!(
                    "SQL{k} failed: {}",
                    round.error.as_deref().unwrap_or("unknown")
                )),
            }
            trace.rounds.push(round);
        }

        let candidates: Vec<(u32, String)> = self
            .config
            .scv_candidates
            .iter()
            .filter_map(|&r| trace.sql(r).map(|sql| (r, sql.to_string())))
            .collect();
        if candidates.is_empty() {
            trace.notes.push("vote skipped: no candidate SQL".into());
        } else {
            let db = self.resolver.resolve(&record.db_id);
            match self_consistency_vote(&candidates, &db, self.config.exec_timeout_ms) {
                Ok(vote) => {
                    trace.scv_sql = Some(vote.sql);
                    trace.scv_round = Some(vote.round);
                }
                Err(e) => trace.notes.push(format!("vote failed: {e}")),
            }
        }
        trace
    }

    /// Runs every record on a pool of `worker_count` threads.
    ///
    /// Traces come back in input order. With a checkpoint, finished traces
    /// are appended as they complete and the file is rewritten sorted by
    /// question id at the end; on resume, questions already present are not
    /// run again.
    pub fn run_dataset(
        &self,
        records: &[QuestionRecord],
        schemas: &SchemaIndex,
        checkpoint: Option<&Checkpoint>,
    ) -> Result<Vec<PipelineTrace>, PipelineError> {
        self.config.validate()?;
        let mut jobs = Vec::with_capacity(records.len());
        for record in records {
            let schema = schemas
                .get(&record.db_id)
                .ok_or_else(|| PipelineError::UnknownDatabase {
                    question_id: record.question_id,
                    db_id: record.db_id.clone(),
                })?;
            jobs.push((record, schema));
        }

        let done = checkpoint.map(Checkpoint::completed).unwrap_or_default();
        let pending: Vec<_> = jobs
            .iter()
            .filter(|(r, _)| !done.contains_key(&r.question_id))
            .collect();
        if !done.is_empty() {
            tracing::info!(
                skipped = records.len() - pending.len(),
                "resuming from checkpoint"
            );
        }

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.worker_count)
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        let total = pending.len();
        let finished = AtomicUsize::new(0);
        let every = (total / 20).max(1);
        let fresh: Vec<PipelineTrace> = pool.install(|| {
            pending
                .par_iter()
                .map(|(record, schema)| {
                    let trace = self.run_question(record, schema);
                    if let Some(cp) = checkpoint
                        && let Err(e) = cp.append(&trace)
                    {
                        tracing::error!("checkpoint append failed: {e}");
                    }
                    let n = finished.fetch_add(1, Ordering::Relaxed) + 1;
                    if n.is_multiple_of(every) || n == total {
                        tracing::info!("{n}/{total} questions done");
                    }
                    trace
                })
                .collect()
        });

        let mut by_id: BTreeMap<usize, PipelineTrace> = done;
        for trace in fresh {
            by_id.insert(trace.question_id, trace);
        }
        if let Some(cp) = checkpoint {
            cp.finalize(&by_id)?;
        }
        Ok(records.iter().map(|r| by_id[&r.question_id].clone()).collect())
    }
}

/// JSONL trace file, one [`PipelineTrace`] per line keyed by question id.
pub struct Checkpoint {
    path: PathBuf,
    existing: BTreeMap<usize, PipelineTrace>,
    writer: Mutex<BufWriter<File>>,
}

impl Checkpoint {
    /// Opens `path` for a run. With `resume`, traces already in the file are
    /// kept and reported as completed; otherwise the file is truncated.
    pub fn open(path: impl Into<PathBuf>, resume: bool) -> Result<Self, PipelineError> {
        let path = path.into();
        let fail = |message: String| PipelineError::Checkpoint {
            path: path.clone(),
            message,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| fail(e.to_string()))?;
        }
        let existing = if resume && path.exists() {
            read_traces(&path)?
                .into_iter()
                .map(|t| (t.question_id, t))
                .collect()
        } else {
            BTreeMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(resume)
            .write(true)
            .truncate(!resume)
            .open(&path)
            .map_err(|e| fail(e.to_string()))?;
        Ok(Self {
            path,
            existing,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn completed(&self) -> BTreeMap<usize, PipelineTrace> {
        self.existing.clone()
    }

    fn append(&self, trace: &PipelineTrace) -> Result<(), PipelineError> {
        let line = serde_json::to_string(trace).map_err(|e| PipelineError::Checkpoint {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        let mut w = self.writer.lock().expect("checkpoint writer lock");
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| PipelineError::Checkpoint {
                path: self.path.clone(),
                message: e.to_string(),
            })
    }

    fn finalize(&self, traces: &BTreeMap<usize, PipelineTrace>) -> Result<(), PipelineError> {
        let fail = |message: String| PipelineError::Checkpoint {
            path: self.path.clone(),
            message,
        };
        let _guard = self.writer.lock().expect("checkpoint writer lock");
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(|e| fail(e.to_string()))?);
            for trace in traces.values() {
                let line = serde_json::to_string(trace).map_err(|e| fail(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| fail(e.to_string()))?;
            }
            out.flush().map_err(|e| fail(e.to_string()))?;
        }
        fs::rename(&tmp, &self.path).map_err(|e| fail(e.to_string()))
    }
}

/// Reads a trace file. A torn final line from an interrupted run is skipped.
pub fn read_traces(path: &Path) -> Result<Vec<PipelineTrace>, PipelineError> {
    let fail = |message: String| PipelineError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|e| fail(e.to_string()))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| fail(e.to_string()))?;
    let last = lines.len().saturating_sub(1);
    let mut traces = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PipelineTrace>(line) {
            Ok(t) => traces.push(t),
            Err(e) if i == last => tracing::warn!("ignoring torn checkpoint line {}: {e}", i + 1),
            Err(e) => return Err(fail(format!("line {}: {e}", i + 1))),
        }
    }
    Ok(traces)
}
