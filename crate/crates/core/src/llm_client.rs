//! Completion backends: a live OpenAI-compatible chat endpoint with retries
//! and a JSONL response cache, and a replay store that never touches the
//! network. Both key responses by a content hash of the request.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::prompting::Prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn from_prompt(model: &str, prompt: &Prompt, temperature: f64, max_tokens: u32) -> Self {
        Self {
            model: model.to_string(),
            system_text: prompt.system_text.clone(),
            user_text: prompt.user_text.clone(),
            temperature,
            max_tokens,
        }
    }

    /// Hex SHA-256 over model, system text, user text and temperature.
    pub fn request_key(&self) -> String {
        let canonical = json!([self.model, self.system_text, self.user_text, self.temperature]);
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultSource {
    Live,
    Cache,
    Replay,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub source: ResultSource,
    /// Wall time of the network call; zero for cache and replay hits.
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("credentials rejected (HTTP {status})")]
    Credential { status: u16 },
    #[error("no replay fixture for request {request_key}")]
    FixtureMiss { request_key: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Anything that can turn a request into completion text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

/// One line of a cache or replay file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub request_key: String,
    pub model: String,
    pub raw_text: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Reads a JSONL response file into a key map; later lines win.
pub fn read_records(path: &Path) -> Result<HashMap<String, String>, LlmError> {
    let file = File::open(path).map_err(|source| LlmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| LlmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CacheRecord = serde_json::from_str(&line).map_err(|e| LlmError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        map.insert(record.request_key, record.raw_text);
    }
    Ok(map)
}

/// Writes records as JSONL, replacing `path`.
pub fn write_records(path: &Path, records: &[CacheRecord]) -> Result<(), LlmError> {
    let io_err = |source| LlmError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| LlmError::Malformed(e.to_string()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Serves completions from a fixture file only.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(Self {
            responses: read_records(path.as_ref())?,
        })
    }

    pub fn from_records(records: impl IntoIterator<Item = CacheRecord>) -> Self {
        Self {
            responses: records.into_iter().map(|r| (r.request_key, r.raw_text)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let key = req.request_key();
        match self.responses.get(&key) {
            Some(text) => Ok(CompletionResult {
                raw_text: text.clone(),
                source: ResultSource::Replay,
                latency_ms: 0,
                usage: None,
            }),
            None => Err(LlmError::FixtureMiss { request_key: key }),
        }
    }
}

/// Append-only JSONL response cache shared by concurrent workers.
pub struct ResponseCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<BufWriter<File>>,
}

impl ResponseCache {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| LlmError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let entries = if path.exists() {
            read_records(&path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| LlmError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: &str, model: &str, raw_text: &str) -> Result<(), LlmError> {
        let record = CacheRecord {
            request_key: key.to_string(),
            model: model.to_string(),
            raw_text: raw_text.to_string(),
            timestamp: now_secs(),
        };
        let line = serde_json::to_string(&record).map_err(|e| LlmError::Malformed(e.to_string()))?;
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| LlmError::Io {
                    path: self.path.clone(),
                    source,
                })?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(record.request_key, record.raw_text);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub api_key: String,
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            retries: 3,
            backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct LiveBackend {
    http: reqwest::blocking::Client,
    config: LiveConfig,
    cache: Option<ResponseCache>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(String, Option<TokenUsage>),
    Retry(String),
    Fatal(LlmError),
}

impl LiveBackend {
    pub fn new(config: LiveConfig, cache: Option<ResponseCache>) -> Result<Self, LlmError> {
        if config.base_url.trim().is_empty() {
            return Err(LlmError::Config("live mode needs a base URL".into()));
        }
        if config.api_key.is_empty() {
            return Err(LlmError::Config("live mode needs an API key".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { http, config, cache })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, req: &CompletionRequest) -> Attempt {
        let body = json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp = match self
            .http
            .post(self.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
        {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match serde_json::from_str::<ChatResponse>(&text) {
                Ok(parsed) => {
                    let Some(choice) = parsed.choices.into_iter().next() else {
                        return Attempt::Fatal(LlmError::Malformed("no choices".into()));
                    };
                    let usage = parsed.usage.map(|u| TokenUsage {
                        prompt_tokens: u.prompt_tokens,
                        completion_tokens: u.completion_tokens,
                    });
                    Attempt::Done(choice.message.content.unwrap_or_default(), usage)
                }
                Err(e) => Attempt::Fatal(LlmError::Malformed(e.to_string())),
            },
            401 | 403 => Attempt::Fatal(LlmError::Credential { status }),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(LlmError::Http { status, body: text }),
        }
    }
}

impl CompletionBackend for LiveBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let key = req.request_key();
        if let Some(text) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(CompletionResult {
                raw_text: text,
                source: ResultSource::Cache,
                latency_ms: 0,
                usage: None,
            });
        }
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(req) {
                Attempt::Done(raw_text, usage) => {
                    if let Some(cache) = &self.cache {
                        cache.insert(&key, &req.model, &raw_text)?;
                    }
                    return Ok(CompletionResult {
                        raw_text,
                        source: ResultSource::Live,
                        latency_ms: started.elapsed().as_millis() as u64,
                        usage,
                    });
                }
                Attempt::Fatal(err) => return Err(err),
                Attempt::Retry(message) => {
                    if attempts > self.config.retries {
                        return Err(LlmError::Transport { attempts, message });
                    }
                    let delay = self.config.backoff * 2u32.saturating_pow(attempts - 1);
                    tracing::warn!(attempt = attempts, %message, "retrying completion in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// SQL extraction from model output

fn statement_start() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?is)\bselect\b|\bwith\s+(?:recursive\s+)?(?:[a-z_][a-z0-9_]*|"[^"]*"|`[^`]*`)\s*(?:\(|as\b)"#,
        )
        .expect("valid regex")
    })
}

fn strip_fence(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    // Skip the info string (`sql`, `sqlite`, ...) up to the end of the line.
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

fn cut_at_semicolon(sql: &str) -> &str {
    let mut quote: Option<char> = None;
    for (i, c) in sql.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if matches!(c, '\'' | '"' | '`') => quote = Some(c),
            None if c == ';' => return &sql[..i],
            None => {}
        }
    }
    sql
}

/// Pulls a single SQL statement out of raw model output.
///
/// Strips a markdown fence, starts at the first `SELECT` or `WITH`, and cuts
/// at the first unquoted semicolon. Text with no statement is returned trimmed.
pub fn extract_sql(raw_text: &str) -> String {
    let body = strip_fence(raw_text);
    match statement_start().find(body) {
        Some(m) => cut_at_semicolon(&body[m.start()..]).trim().to_string(),
        None => body.trim().to_string(),
    }
}
