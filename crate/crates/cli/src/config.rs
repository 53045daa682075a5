//! Layered run configuration: flag > environment > config file > default.
//!
//! Flags and environment variables arrive together through clap as
//! [`Overrides`]; the TOML file fills whatever they leave unset. Relative
//! paths in the file are taken relative to the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result, bail};
use schemalink_core::evaluation::DEFAULT_EXEC_TIMEOUT_MS;
use schemalink_core::pipeline::RunConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub mode: BackendMode,
    /// Replay file; required in replay mode.
    pub fixture: Option<PathBuf>,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub rounds: u32,
    pub scv_candidates: Vec<u32>,
    pub worker_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathsConfig {
    /// Live-mode response cache; `None` disables caching.
    pub cache: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub report_out: PathBuf,
    /// Directory with `isg.txt` and `sg.txt`; bundled templates otherwise.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub data_root: PathBuf,
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    pub exec_timeout_ms: u64,
    pub paths: PathsConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            data_root: PathBuf::from("data"),
            backend: BackendConfig {
                mode: BackendMode::Live,
                fixture: None,
                base_url: "https://api.openai.com/v1".into(),
                api_key_env: "OPENAI_API_KEY".into(),
                model: run.model,
                temperature: run.temperature,
                max_tokens: run.max_tokens,
                retries: 3,
                timeout_ms: 120_000,
            },
            pipeline: PipelineConfig {
                rounds: run.rounds,
                scv_candidates: run.scv_candidates,
                worker_count: run.worker_count,
            },
            exec_timeout_ms: DEFAULT_EXEC_TIMEOUT_MS,
            paths: PathsConfig {
                cache: Some(PathBuf::from("runs/cache.jsonl")),
                checkpoint: PathBuf::from("runs/traces.jsonl"),
                report_out: PathBuf::from("runs/report.json"),
                templates: None,
            },
        }
    }
}

impl AppConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            rounds: self.pipeline.rounds,
            scv_candidates: self.pipeline.scv_candidates.clone(),
            worker_count: self.pipeline.worker_count,
            model: self.backend.model.clone(),
            temperature: self.backend.temperature,
            max_tokens: self.backend.max_tokens,
            exec_timeout_ms: self.exec_timeout_ms,
        }
    }

    /// Checks the invariants that do not depend on the environment.
    pub fn validate(&self) -> Result<()> {
        match self.backend.mode {
            BackendMode::Replay if self.backend.fixture.is_none() => {
                bail!("replay mode needs a fixture file (backend.fixture or --fixture)")
            }
            BackendMode::Live if self.backend.base_url.trim().is_empty() => {
                bail!("live mode needs a base URL (backend.base_url or --base-url)")
            }
            _ => {}
        }
        self.run_config().validate()?;
        Ok(())
    }

    /// Reads the API key from the configured environment variable.
    pub fn api_key(&self) -> Result<String> {
        match std::env::var(&self.backend.api_key_env) {
            Ok(key) if !key.trim().is_empty() => Ok(key),
            _ => bail!(
                "live mode needs an API key in the environment variable {}",
                self.backend.api_key_env
            ),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data_root: Option<PathBuf>,
    #[serde(default)]
    backend: FileBackend,
    #[serde(default)]
    pipeline: FilePipeline,
    #[serde(default)]
    eval: FileEval,
    #[serde(default)]
    paths: FilePaths,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBackend {
    mode: Option<BackendMode>,
    fixture: Option<PathBuf>,
    base_url: Option<String>,
    api_key_env: Option<String>,
    model: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    retries: Option<u32>,
    timeout_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePipeline {
    rounds: Option<u32>,
    scv_candidates: Option<Vec<u32>>,
    worker_count: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEval {
    exec_timeout_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePaths {
    cache: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    report_out: Option<PathBuf>,
    templates: Option<PathBuf>,
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_root: Option<PathBuf>,
    pub mode: Option<BackendMode>,
    pub fixture: Option<PathBuf>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub retries: Option<u32>,
    pub timeout_ms: Option<u64>,
    pub rounds: Option<u32>,
    pub scv_candidates: Option<Vec<u32>>,
    pub worker_count: Option<usize>,
    pub exec_timeout_ms: Option<u64>,
    pub cache: Option<PathBuf>,
    pub no_cache: bool,
    pub checkpoint: Option<PathBuf>,
    pub report_out: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

fn parse_file(text: &str, origin: &Path) -> Result<FileConfig> {
    toml::from_str(text).with_context(|| format!("invalid config file {}", origin.display()))
}

/// Builds the effective configuration from an optional config file and overrides.
pub fn load(config_path: Option<&Path>, o: &Overrides) -> Result<AppConfig> {
    let (file, base) = match config_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (parse_file(&text, path)?, base)
        }
        None => (FileConfig::default(), PathBuf::new()),
    };
    Ok(merge(file, &base, o))
}

fn merge(f: FileConfig, base: &Path, o: &Overrides) -> AppConfig {
    let d = AppConfig::default();
    let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let cache = if o.no_cache {
        None
    } else {
        o.cache.clone().or(f.paths.cache.map(rel)).or(d.paths.cache)
    };
    AppConfig {
        data_root: o
            .data_root
            .clone()
            .or(f.data_root.map(rel))
            .unwrap_or(d.data_root),
        backend: BackendConfig {
            mode: o.mode.or(f.backend.mode).unwrap_or(d.backend.mode),
            fixture: o.fixture.clone().or(f.backend.fixture.map(rel)),
            base_url: o
                .base_url
                .clone()
                .or(f.backend.base_url)
                .unwrap_or(d.backend.base_url),
            api_key_env: o
                .api_key_env
                .clone()
                .or(f.backend.api_key_env)
                .unwrap_or(d.backend.api_key_env),
            model: o.model.clone().or(f.backend.model).unwrap_or(d.backend.model),
            temperature: o
                .temperature
                .or(f.backend.temperature)
                .unwrap_or(d.backend.temperature),
            max_tokens: o
                .max_tokens
                .or(f.backend.max_tokens)
                .unwrap_or(d.backend.max_tokens),
            retries: o.retries.or(f.backend.retries).unwrap_or(d.backend.retries),
            timeout_ms: o
                .timeout_ms
                .or(f.backend.timeout_ms)
                .unwrap_or(d.backend.timeout_ms),
        },
        pipeline: PipelineConfig {
            rounds: o.rounds.or(f.pipeline.rounds).unwrap_or(d.pipeline.rounds),
            scv_candidates: o
                .scv_candidates
                .clone()
                .or(f.pipeline.scv_candidates)
                .unwrap_or(d.pipeline.scv_candidates),
            worker_count: o
                .worker_count
                .or(f.pipeline.worker_count)
                .unwrap_or(d.pipeline.worker_count),
        },
        exec_timeout_ms: o
            .exec_timeout_ms
            .or(f.eval.exec_timeout_ms)
            .unwrap_or(d.exec_timeout_ms),
        paths: PathsConfig {
            cache,
            checkpoint: o
                .checkpoint
                .clone()
                .or(f.paths.checkpoint.map(rel))
                .unwrap_or(d.paths.checkpoint),
            report_out: o
                .report_out
                .clone()
                .or(f.paths.report_out.map(rel))
                .unwrap_or(d.paths.report_out),
            templates: o.templates.clone().or(f.paths.templates.map(rel)),
        },
    }
}
