//! Text-generation backends behind one interface.
//!
//! Game players never talk to a model directly; they hand a system prompt
//! and their conversation history to a [`Backend`]. The strategy backend
//! plays deterministic textbook strategies, the scripted backend replays
//! fixed responses, the dummy backend mimics a slow model, and the remote
//! backend speaks a chat-completions HTTP API.

mod dummy;
mod remote;
mod scripted;
mod strategy;

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::GameRule;
use crate::message::Message;

pub use dummy::DummyBackend;
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::ScriptedBackend;
pub use strategy::{strategy_decide, StrategyBackend, StrategyConfig, StrategyKind};

/// System prompt of the second, number-only call of a round.
pub const EXTRACTION_PROMPT: &str =
    "Extract the number the player reported in the following response. Output only that number and nothing else.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend failed: {0}")]
    Failed(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no winner announced yet for strategy `{0}`")]
    MissingWinner(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 1.0, seed: 0, max_tokens: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub token_count: u64,
}

impl GenerationResult {
    /// Result with a whitespace-token count.
    pub fn counted(text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = text.split_whitespace().count() as u64;
        Self { text, token_count }
    }
}

/// Must tolerate concurrent `generate` calls from many agents.
pub trait Backend: Send + Sync {
    fn generate(
        &self,
        system_prompt: &str,
        history: &[Message],
        params: &GenerationParams,
    ) -> Result<GenerationResult, BackendError>;
}

/// Serializable backend description, so players can be built on any server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    Strategy {
        strategy: StrategyConfig,
        rule: GameRule,
    },
    Dummy {
        #[serde(default)]
        delay_ms: Option<u64>,
    },
    Scripted {
        script: Vec<String>,
    },
    Remote(RemoteConfig),
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendError> {
        Ok(match self {
            BackendSpec::Strategy { strategy, rule } => {
                strategy.validate()?;
                Arc::new(StrategyBackend::new(strategy.clone(), rule.clone()))
            }
            BackendSpec::Dummy { delay_ms } => Arc::new(match delay_ms {
                Some(ms) => DummyBackend::with_delay(std::time::Duration::from_millis(*ms)),
                None => DummyBackend::new(),
            }),
            BackendSpec::Scripted { script } => Arc::new(ScriptedBackend::new(script.clone())),
            BackendSpec::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())?),
        })
    }
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap());

/// Last decimal number appearing in `text`.
pub fn extract_last_number(text: &str) -> Option<f64> {
    NUMBER.find_iter(text).last().and_then(|m| m.as_str().parse().ok())
}

/// Answers an extraction call from the response it was given.
pub(crate) fn answer_extraction(history: &[Message]) -> GenerationResult {
    let source = history.last().map(Message::content).unwrap_or("");
    match extract_last_number(source) {
        Some(x) => GenerationResult::counted(x.to_string()),
        None => GenerationResult::counted("No number found."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_number() {
        assert_eq!(extract_last_number("My reported number is **33**."), Some(33.0));
        assert_eq!(extract_last_number("2/3 of 50 is 33.33, so 22.22"), Some(22.22));
        assert_eq!(extract_last_number("no digits"), None);
    }

    #[test]
    fn spec_round_trips() {
        let spec = BackendSpec::Dummy { delay_ms: Some(5) };
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(v["type"], "dummy");
        assert_eq!(serde_json::from_value::<BackendSpec>(v).unwrap(), spec);
    }
}
