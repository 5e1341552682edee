//! Blocking HTTP backend for OpenAI-style chat and embedding endpoints.

use super::{ChatBackend, ChatRequest, GatewayError};
use serde::Deserialize;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Endpoint root, e.g. `https://api.example.com`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub chat_path: String,
    pub embeddings_path: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            chat_path: "/v1/chat/completions".to_string(),
            embeddings_path: "/v1/embeddings".to_string(),
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatCompletionReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingsReply {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        let mut request = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;

        let status = response.status();
        if status.as_u16() == 429 {
            let retry_after_ms = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(|secs| secs * 1000);
            return Err(GatewayError::RateLimited { retry_after_ms });
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(GatewayError::Transport(format!(
                "HTTP {}: {}",
                status.as_u16(),
                body.chars().take(200).collect::<String>()
            )));
        }
        response
            .json()
            .map_err(|e| GatewayError::MalformedReply(e.to_string()))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = serde_json::to_value(request)
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let value = self.post(&self.config.chat_path, &body)?;
        let reply: ChatCompletionReply = serde_json::from_value(value)
            .map_err(|e| GatewayError::MalformedReply(e.to_string()))?;
        let first = reply
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedReply("no choices in reply".into()))?;
        Ok(first.message.content)
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = serde_json::json!({ "model": model, "input": texts });
        let value = self.post(&self.config.embeddings_path, &body)?;
        let reply: EmbeddingsReply = serde_json::from_value(value)
            .map_err(|e| GatewayError::MalformedReply(e.to_string()))?;
        if reply.data.len() != texts.len() {
            return Err(GatewayError::MalformedReply(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                reply.data.len()
            )));
        }
        Ok(reply.data.into_iter().map(|row| row.embedding).collect())
    }
}
