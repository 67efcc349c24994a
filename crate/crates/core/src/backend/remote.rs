//! Chat-completions HTTP client.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, GenerationParams, GenerationResult};
use crate::message::{Message, Role};

const BACKOFF: [Duration; 3] = [Duration::from_millis(500), Duration::from_secs(1), Duration::from_secs(2)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if the endpoint needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    http: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_s))
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.cfg.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::Auth(format!("environment variable {var} is not set"))),
        }
    }

    fn body(&self, system_prompt: &str, history: &[Message], params: &GenerationParams) -> Value {
        let mut messages = Vec::with_capacity(history.len() + 1);
        if !system_prompt.is_empty() {
            messages.push(json!({ "role": "system", "content": system_prompt }));
        }
        for m in history {
            let role = match m.role() {
                Role::Assistant => "assistant",
                // Announcements arrive as system messages from the environment.
                Role::System | Role::User => "user",
            };
            messages.push(json!({ "role": role, "content": m.content() }));
        }
        json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": params.temperature,
            "seed": params.seed,
            "max_tokens": params.max_tokens,
        })
    }
}

impl Backend for RemoteBackend {
    fn generate(
        &self,
        system_prompt: &str,
        history: &[Message],
        params: &GenerationParams,
    ) -> Result<GenerationResult, BackendError> {
        let key = self.api_key()?;
        let body = self.body(system_prompt, history, params);
        let mut attempt = 0;
        loop {
            let mut req = self.http.post(self.url()).json(&body);
            if let Some(k) = &key {
                req = req.bearer_auth(k);
            }
            let resp = req.send().map_err(|e| BackendError::Failed(e.to_string()))?;
            let status = resp.status().as_u16();
            if status == 401 || status == 403 {
                return Err(BackendError::Auth(format!("HTTP {status}")));
            }
            if (500..600).contains(&status) && attempt < BACKOFF.len() {
                tracing::warn!(status, attempt, "remote backend error, retrying");
                thread::sleep(BACKOFF[attempt]);
                attempt += 1;
                continue;
            }
            let text = resp.text().map_err(|e| BackendError::Failed(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(BackendError::Http { status, body: text });
            }
            return parse_completion(&text);
        }
    }
}

fn parse_completion(body: &str) -> Result<GenerationResult, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Failed(format!("bad response JSON: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Failed("response lacks choices[0].message.content".into()))?
        .to_string();
    let token_count = v
        .pointer("/usage/total_tokens")
        .and_then(Value::as_u64)
        .unwrap_or_else(|| text.split_whitespace().count() as u64);
    Ok(GenerationResult { text, token_count })
}
