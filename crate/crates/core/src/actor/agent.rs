use std::collections::HashMap;
use std::sync::{Arc, LazyLock, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::message::Message;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("unknown agent kind `{0}`")]
    UnknownKind(String),
    #[error("invalid agent params: {0}")]
    InvalidParams(String),
    #[error("{0}")]
    Failed(String),
}

/// Identity handed to an agent for each reply.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub agent_id: String,
    pub name: String,
}

/// A computing unit. Each instance processes one batch of inputs at a time;
/// the runtime never calls `reply` concurrently on the same agent.
pub trait Agent: Send {
    fn reply(&mut self, inputs: Vec<Message>, ctx: &AgentContext) -> Result<Message, AgentError>;
}

/// Everything needed to construct an agent in any process that has `kind`
/// registered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDef {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub params: Value,
    /// Requested agent id; generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl AgentDef {
    pub fn new(name: impl Into<String>, kind: impl Into<String>, params: Value) -> Self {
        Self { name: name.into(), kind: kind.into(), params, id: None }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }
}

pub type AgentFactory = Arc<dyn Fn(&AgentDef) -> Result<Box<dyn Agent>, AgentError> + Send + Sync>;

/// Maps agent kinds to constructors.
pub struct AgentRegistry {
    kinds: RwLock<HashMap<String, AgentFactory>>,
}

impl AgentRegistry {
    pub fn empty() -> Self {
        Self { kinds: RwLock::new(HashMap::new()) }
    }

    pub fn with_builtins() -> Self {
        let reg = Self::empty();
        super::builtin::register_builtins(&reg);
        reg
    }

    pub fn register<F>(&self, kind: impl Into<String>, factory: F)
    where
        F: Fn(&AgentDef) -> Result<Box<dyn Agent>, AgentError> + Send + Sync + 'static,
    {
        self.kinds.write().unwrap().insert(kind.into(), Arc::new(factory));
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.kinds.read().unwrap().contains_key(kind)
    }

    pub fn instantiate(&self, def: &AgentDef) -> Result<Box<dyn Agent>, AgentError> {
        let factory = self
            .kinds
            .read()
            .unwrap()
            .get(&def.kind)
            .cloned()
            .ok_or_else(|| AgentError::UnknownKind(def.kind.clone()))?;
        factory(def)
    }

    pub fn kinds(&self) -> Vec<String> {
        let mut k: Vec<_> = self.kinds.read().unwrap().keys().cloned().collect();
        k.sort();
        k
    }
}

static REGISTRY: LazyLock<AgentRegistry> = LazyLock::new(AgentRegistry::with_builtins);

/// Process-wide registry used by `spawn_local` and by agent servers.
pub fn registry() -> &'static AgentRegistry {
    &REGISTRY
}
