//! Single funnel for model interactions.
//!
//! Everything that talks to a model — real endpoint, deterministic mock, or
//! recorded tape — goes through [`Gateway::call`] as a rendered prompt in
//! and a reply string out. The gateway owns caching, rate limiting, retry,
//! usage counters, and a record/replay tape; callers never see transport
//! details.

mod embed;
mod http;
mod mock;
mod templates;

pub use embed::{EmbedFileError, PrecomputedEmbeddings};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockFixture, MockLlmBackend};
pub use templates::{extract_section, first_line, render, template_text, TemplateName};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("template slot not filled: {0}")]
    MissingSlot(String),
    #[error("no provider configured for this operation")]
    ProviderUnavailable,
    #[error("no precomputed embedding for text hash {0}")]
    MissingPrecomputed(String),
    #[error("no scripted reply for prompt: {0}")]
    Unscripted(String),
}

impl GatewayError {
    /// Transport-level trouble is worth retrying; everything else is not.
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::Transport(_)
                | GatewayError::RateLimited { .. }
                | GatewayError::MalformedReply(_)
        )
    }
}

/// Chat roles on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// A chat completion request as serialized to the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// The content of the last user message — the rendered prompt.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// Anything that can answer a chat request. Embedding support is optional.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;

    fn embed(&self, _model: &str, _texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Err(GatewayError::ProviderUnavailable)
    }
}

/// How many times to re-attempt a failed backend call and how long to wait
/// between attempts. Rate-limit replies carrying their own delay take
/// precedence over the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            backoff_ms: vec![50, 200],
        }
    }
}

impl RetryPolicy {
    fn delay_for(&self, attempt: u32) -> u64 {
        match self.backoff_ms.as_slice() {
            [] => 0,
            slice => {
                let idx = (attempt as usize).min(slice.len() - 1);
                slice[idx]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub retry: RetryPolicy,
    /// Minimum spacing between backend calls, 0 to disable.
    pub min_interval_ms: u64,
    /// Maximum in-flight backend calls across threads.
    pub max_concurrent: usize,
    /// Optional JSONL log of every backend exchange. Credentials are never
    /// written here.
    pub log_path: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            model: "mock-small".to_string(),
            temperature: 0.0,
            max_tokens: None,
            retry: RetryPolicy::default(),
            min_interval_ms: 0,
            max_concurrent: 8,
            log_path: None,
        }
    }
}

/// One recorded exchange, sufficient to replay the run byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapeEntry {
    pub name: TemplateName,
    pub model: String,
    pub temperature: f64,
    pub prompt: String,
    pub reply: String,
}

/// Usage counters, all monotonically increasing over the gateway's lifetime.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CallCounters {
    /// Every `call()` including cache hits.
    pub interactions: u64,
    /// Calls that reached the backend (first attempts only).
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub by_name: BTreeMap<String, u64>,
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.0.permits.lock().unwrap();
        *permits += 1;
        self.0.cv.notify_one();
    }
}

/// The funnel. Shared by reference across worker threads.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    config: GatewayConfig,
    embeddings: Option<PrecomputedEmbeddings>,
    cache: Mutex<HashMap<(TemplateName, String), String>>,
    tape: Mutex<Vec<TapeEntry>>,
    counters: Mutex<CallCounters>,
    last_call: Mutex<Option<Instant>>,
    semaphore: Semaphore,
    log: Mutex<Option<File>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>, config: GatewayConfig) -> Self {
        let log = config.log_path.as_ref().and_then(|p| {
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .ok()
        });
        let semaphore = Semaphore::new(config.max_concurrent);
        Self {
            backend,
            config,
            embeddings: None,
            cache: Mutex::new(HashMap::new()),
            tape: Mutex::new(Vec::new()),
            counters: Mutex::new(CallCounters::default()),
            last_call: Mutex::new(None),
            semaphore,
            log: Mutex::new(log),
        }
    }

    /// Attach a store of precomputed query embeddings. These take precedence
    /// over the backend's embedding endpoint.
    pub fn with_precomputed_embeddings(mut self, store: PrecomputedEmbeddings) -> Self {
        self.embeddings = Some(store);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Render `name` with `slots` and send it through [`Gateway::call`].
    pub fn call_template(
        &self,
        name: TemplateName,
        slots: &[(&str, &str)],
    ) -> Result<String, GatewayError> {
        let prompt = render(name, slots)?;
        self.call(name, &prompt)
    }

    /// Send a rendered prompt to the backend: cache first, then rate gate,
    /// then the retry loop. Successful exchanges land on the tape and in
    /// the cache, so an identical prompt is answered without a second
    /// backend round trip.
    pub fn call(&self, name: TemplateName, prompt: &str) -> Result<String, GatewayError> {
        {
            let mut counters = self.counters.lock().unwrap();
            counters.interactions += 1;
            *counters.by_name.entry(name.as_str().to_string()).or_insert(0) += 1;
        }
        if let Some(reply) = self
            .cache
            .lock()
            .unwrap()
            .get(&(name, prompt.to_string()))
            .cloned()
        {
            self.counters.lock().unwrap().cache_hits += 1;
            return Ok(reply);
        }

        let _permit = self.semaphore.acquire();
        self.pace();

        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: prompt.to_string(),
            }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        self.counters.lock().unwrap().backend_calls += 1;

        let mut attempt = 0u32;
        let reply = loop {
            match self.backend.complete(&request) {
                Ok(reply) => break reply,
                Err(err) if err.is_retryable() && attempt < self.config.retry.max_retries => {
                    let delay = match &err {
                        GatewayError::RateLimited {
                            retry_after_ms: Some(ms),
                        } => *ms,
                        _ => self.config.retry.delay_for(attempt),
                    };
                    self.counters.lock().unwrap().retries += 1;
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        };

        let entry = TapeEntry {
            name,
            model: request.model.clone(),
            temperature: request.temperature,
            prompt: prompt.to_string(),
            reply: reply.clone(),
        };
        if let Some(log) = self.log.lock().unwrap().as_mut() {
            if let Ok(line) = serde_json::to_string(&entry) {
                let _ = writeln!(log, "{line}");
            }
        }
        self.tape.lock().unwrap().push(entry);
        self.cache
            .lock()
            .unwrap()
            .insert((name, prompt.to_string()), reply.clone());
        Ok(reply)
    }

    /// Embed one query string. Precomputed vectors win; otherwise the
    /// backend's embedding endpoint is asked; with neither available this
    /// is [`GatewayError::ProviderUnavailable`], and a precomputed store
    /// that lacks the text reports the missing hash instead.
    pub fn embed_query(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if let Some(store) = &self.embeddings {
            if let Some(vec) = store.lookup(text) {
                return Ok(vec);
            }
            match self.backend.embed(&self.config.model, &[text.to_string()]) {
                Ok(mut vecs) if !vecs.is_empty() => return Ok(vecs.remove(0)),
                Ok(_) => {
                    return Err(GatewayError::MalformedReply(
                        "embedding endpoint returned no vectors".into(),
                    ))
                }
                Err(GatewayError::ProviderUnavailable) => {
                    return Err(GatewayError::MissingPrecomputed(
                        PrecomputedEmbeddings::hash_of(text),
                    ))
                }
                Err(e) => return Err(e),
            }
        }
        let mut vecs = self.backend.embed(&self.config.model, &[text.to_string()])?;
        if vecs.is_empty() {
            return Err(GatewayError::MalformedReply(
                "embedding endpoint returned no vectors".into(),
            ));
        }
        Ok(vecs.remove(0))
    }

    fn pace(&self) {
        if self.config.min_interval_ms == 0 {
            return;
        }
        let min = Duration::from_millis(self.config.min_interval_ms);
        let mut last = self.last_call.lock().unwrap();
        if let Some(at) = *last {
            let elapsed = at.elapsed();
            if elapsed < min {
                std::thread::sleep(min - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    pub fn counters(&self) -> CallCounters {
        self.counters.lock().unwrap().clone()
    }

    pub fn tape(&self) -> Vec<TapeEntry> {
        self.tape.lock().unwrap().clone()
    }

    /// Write the tape as JSONL, one exchange per line.
    pub fn save_tape<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let mut file = File::create(path)?;
        for entry in self.tape.lock().unwrap().iter() {
            let line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
            writeln!(file, "{line}")?;
        }
        Ok(())
    }
}

/// Render, call, and parse — with one corrective re-prompt. When the first
/// reply fails to parse, the prompt is re-sent with the parse failure
/// appended as an instruction; a second unparseable reply is a
/// [`GatewayError::MalformedReply`].
pub fn call_with_reparse<T>(
    gateway: &Gateway,
    name: TemplateName,
    slots: &[(&str, &str)],
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, GatewayError> {
    let prompt = render(name, slots)?;
    let reply = gateway.call(name, &prompt)?;
    match parse(&reply) {
        Ok(value) => Ok(value),
        Err(reason) => {
            let retry = format!(
                "{prompt}\n\nYour previous reply could not be parsed ({reason}). \
                 Answer again using exactly the requested line format."
            );
            let reply = gateway.call(name, &retry)?;
            parse(&reply).map_err(GatewayError::MalformedReply)
        }
    }
}

/// Replays a previously recorded tape: identical prompts get identical
/// replies, anything off-tape is an error.
pub struct TapeBackend {
    replies: HashMap<String, String>,
}

impl TapeBackend {
    pub fn from_entries(entries: &[TapeEntry]) -> Self {
        let replies = entries
            .iter()
            .map(|e| (e.prompt.clone(), e.reply.clone()))
            .collect();
        Self { replies }
    }

    pub fn load<P: AsRef<Path>>(path: P) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TapeEntry =
                serde_json::from_str(&line).map_err(std::io::Error::other)?;
            entries.push(entry);
        }
        Ok(Self::from_entries(&entries))
    }
}

impl ChatBackend for TapeBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let prompt = request.last_user_content();
        self.replies
            .get(prompt)
            .cloned()
            .ok_or_else(|| GatewayError::Unscripted(truncate_for_error(prompt)))
    }
}

/// Test double: serves a queue of canned results first, then falls back to
/// a prompt-substring lookup table.
#[derive(Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<Result<String, GatewayError>>>,
    by_fragment: Vec<(String, String)>,
    calls: Mutex<u64>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue a reply (or failure) served before any fragment matching.
    pub fn push(&self, result: Result<String, GatewayError>) {
        self.queue.lock().unwrap().push_back(result);
    }

    /// Serve `reply` for any prompt containing `fragment`. Fragments are
    /// tried in insertion order.
    pub fn on_fragment(mut self, fragment: &str, reply: &str) -> Self {
        self.by_fragment.push((fragment.to_string(), reply.to_string()));
        self
    }

    pub fn calls(&self) -> u64 {
        *self.calls.lock().unwrap()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        *self.calls.lock().unwrap() += 1;
        if let Some(result) = self.queue.lock().unwrap().pop_front() {
            return result;
        }
        let prompt = request.last_user_content();
        for (fragment, reply) in &self.by_fragment {
            if prompt.contains(fragment.as_str()) {
                return Ok(reply.clone());
            }
        }
        Err(GatewayError::Unscripted(truncate_for_error(prompt)))
    }
}

fn truncate_for_error(prompt: &str) -> String {
    const LIMIT: usize = 120;
    if prompt.len() <= LIMIT {
        prompt.to_string()
    } else {
        let mut end = LIMIT;
        while !prompt.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &prompt[..end])
    }
}
