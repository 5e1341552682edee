//! Configuration resolution for the command-line front end.
//!
//! Settings merge in a fixed precedence order — built-in defaults, then a
//! JSON config file, then `ALIGNRAG_*` environment variables, then
//! command-line flags — and the effective result is printed with secrets
//! redacted at the start of every run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use alignrag::gateway::{ChatBackend, HttpBackend, HttpConfig, MockFixture, MockLlmBackend};
use alignrag::{Gateway, GatewayConfig, PipelineConfig, RetrievalMode};
use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// Environment variable naming the chat/embeddings endpoint base URL.
pub const ENV_ENDPOINT: &str = "ALIGNRAG_ENDPOINT";
/// Environment variable carrying the bearer token for that endpoint.
pub const ENV_API_KEY: &str = "ALIGNRAG_API_KEY";
/// Environment variable naming the model requested from the backend.
pub const ENV_MODEL: &str = "ALIGNRAG_MODEL";

/// Which chat backend the gateway talks to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Http,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend: {other} (expected mock or http)")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Mock => "mock",
            BackendKind::Http => "http",
        })
    }
}

/// Optional settings read from a JSON config file. Unknown keys are
/// rejected so typos fail loudly instead of being silently ignored.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<usize>,
    pub max_iterations: Option<usize>,
    pub candidates_per_iteration: Option<usize>,
    pub tau: Option<f64>,
    pub window: Option<usize>,
    pub mode: Option<String>,
    pub temperature: Option<f64>,
    pub pool_union: Option<bool>,
    pub exclude_no_alignment: Option<bool>,
    pub backend: Option<String>,
    pub mock_fixtures: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub workers: Option<usize>,
}

impl FileConfig {
    /// Load from `path`, or return defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("config file {} is not valid", path.display()))
    }
}

/// Pipeline and gateway settings supplied as command-line flags. Flags
/// take precedence over the config file and the environment.
#[derive(Debug, Default, clap::Args)]
pub struct ConfigFlags {
    /// JSON config file merged between defaults and environment variables.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Supporting documents to keep.
    #[arg(long)]
    pub k: Option<usize>,
    /// Iteration budget for the retrieval loop.
    #[arg(long = "max-iters", value_name = "N")]
    pub max_iters: Option<usize>,
    /// Candidates retrieved per iteration.
    #[arg(long, value_name = "N")]
    pub candidates: Option<usize>,
    /// Alignment-ratio threshold steering the query update.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Selection window size.
    #[arg(long, value_name = "N")]
    pub window: Option<usize>,
    /// Retrieval mode: bm25 or dense.
    #[arg(long)]
    pub mode: Option<String>,
    /// Chat backend: mock or http.
    #[arg(long)]
    pub backend: Option<String>,
    /// Fixture file (JSON) steering the mock backend.
    #[arg(long = "mock-fixtures", value_name = "PATH")]
    pub mock_fixtures: Option<PathBuf>,
}

/// Fully resolved settings after applying the precedence order.
#[derive(Debug)]
pub struct Effective {
    pub pipeline: PipelineConfig,
    pub backend: BackendKind,
    pub mock_fixtures: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub workers: usize,
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

impl Effective {
    /// Merge defaults, the config file, the environment, and flags —
    /// later sources win.
    pub fn resolve(file: &FileConfig, flags: &ConfigFlags) -> Result<Self> {
        let mut pipeline = PipelineConfig::default();
        if let Some(k) = file.k {
            pipeline.k = k;
        }
        if let Some(t) = file.max_iterations {
            pipeline.max_iterations = t;
        }
        if let Some(n) = file.candidates_per_iteration {
            pipeline.candidates_per_iteration = n;
        }
        if let Some(tau) = file.tau {
            pipeline.tau = tau;
        }
        if let Some(w) = file.window {
            pipeline.window = w;
        }
        if let Some(mode) = &file.mode {
            pipeline.retrieval_mode = parse_mode(mode)?;
        }
        if let Some(temp) = file.temperature {
            pipeline.temperature = temp;
        }
        if let Some(union) = file.pool_union {
            pipeline.pool_union = union;
        }
        if let Some(exclude) = file.exclude_no_alignment {
            pipeline.exclude_no_alignment = exclude;
        }
        if let Some(k) = flags.k {
            pipeline.k = k;
        }
        if let Some(t) = flags.max_iters {
            pipeline.max_iterations = t;
        }
        if let Some(n) = flags.candidates {
            pipeline.candidates_per_iteration = n;
        }
        if let Some(tau) = flags.tau {
            pipeline.tau = tau;
        }
        if let Some(w) = flags.window {
            pipeline.window = w;
        }
        if let Some(mode) = &flags.mode {
            pipeline.retrieval_mode = parse_mode(mode)?;
        }

        let mut backend = BackendKind::Mock;
        if let Some(name) = &file.backend {
            backend = parse_backend(name)?;
        }
        if let Some(name) = &flags.backend {
            backend = parse_backend(name)?;
        }

        let mock_fixtures = flags
            .mock_fixtures
            .clone()
            .or_else(|| file.mock_fixtures.clone());
        let endpoint = env_var(ENV_ENDPOINT).or_else(|| file.endpoint.clone());
        let api_key = env_var(ENV_API_KEY).or_else(|| file.api_key.clone());
        let model = env_var(ENV_MODEL)
            .or_else(|| file.model.clone())
            .unwrap_or_else(|| GatewayConfig::default().model);
        let workers = file.workers.unwrap_or(4);
        if workers == 0 {
            bail!("workers must be at least 1");
        }

        Ok(Effective {
            pipeline,
            backend,
            mock_fixtures,
            endpoint,
            api_key,
            model,
            workers,
        })
    }

    /// One-line JSON view of the effective config with secrets redacted.
    pub fn redacted_json(&self) -> serde_json::Value {
        serde_json::json!({
            "k": self.pipeline.k,
            "max_iterations": self.pipeline.max_iterations,
            "candidates_per_iteration": self.pipeline.candidates_per_iteration,
            "tau": self.pipeline.tau,
            "window": self.pipeline.window,
            "mode": mode_name(self.pipeline.retrieval_mode),
            "temperature": self.pipeline.temperature,
            "pool_union": self.pipeline.pool_union,
            "exclude_no_alignment": self.pipeline.exclude_no_alignment,
            "backend": self.backend.to_string(),
            "mock_fixtures": self.mock_fixtures,
            "endpoint": self.endpoint,
            "api_key": self.api_key.as_ref().map(|_| "***"),
            "model": self.model,
            "workers": self.workers,
        })
    }

    /// Build the gateway this config describes.
    pub fn build_gateway(&self) -> Result<Gateway> {
        let backend: Box<dyn ChatBackend> = match self.backend {
            BackendKind::Mock => {
                let fixture = match &self.mock_fixtures {
                    Some(path) => MockFixture::from_file(path).with_context(|| {
                        format!("cannot load mock fixtures from {}", path.display())
                    })?,
                    None => MockFixture::default(),
                };
                Box::new(MockLlmBackend::new(fixture))
            }
            BackendKind::Http => {
                let endpoint = self.endpoint.clone().with_context(|| {
                    format!("the http backend needs an endpoint (config key \"endpoint\" or {ENV_ENDPOINT})")
                })?;
                let mut http = HttpConfig::new(endpoint);
                if let Some(key) = &self.api_key {
                    http = http.with_api_key(key.clone());
                }
                Box::new(HttpBackend::new(http)?)
            }
        };
        let config = GatewayConfig {
            model: self.model.clone(),
            temperature: self.pipeline.temperature,
            ..GatewayConfig::default()
        };
        Ok(Gateway::new(backend, config))
    }
}

fn parse_mode(name: &str) -> Result<RetrievalMode> {
    name.parse::<RetrievalMode>().map_err(anyhow::Error::msg)
}

fn mode_name(mode: RetrievalMode) -> &'static str {
    match mode {
        RetrievalMode::Bm25 => "bm25",
        RetrievalMode::Dense => "dense",
    }
}

fn parse_backend(name: &str) -> Result<BackendKind> {
    name.parse::<BackendKind>().map_err(anyhow::Error::msg)
}
