//! Message and placeholder value types plus their canonical JSON encoding.
//!
//! Every payload that crosses an agent boundary is either a [`Message`] or a
//! [`Placeholder`] for a message that is still being computed elsewhere. The
//! encoding is JSON with lexicographically sorted keys so that two equal
//! payloads always produce identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Key that marks a serialized payload as a placeholder.
pub const PLACEHOLDER_TAG: &str = "__placeholder__";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PayloadError {
    #[error("malformed payload: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> PayloadError {
    PayloadError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scalar metadata value. Nested structure belongs in the message content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(serde_json::Number),
    Text(String),
}

impl Scalar {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Number(n) => n.as_f64(),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Scalar::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Scalar::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl From<&str> for Scalar {
    fn from(s: &str) -> Self {
        Scalar::Text(s.to_string())
    }
}

impl From<String> for Scalar {
    fn from(s: String) -> Self {
        Scalar::Text(s)
    }
}

impl From<bool> for Scalar {
    fn from(b: bool) -> Self {
        Scalar::Bool(b)
    }
}

impl From<i64> for Scalar {
    fn from(n: i64) -> Self {
        Scalar::Number(n.into())
    }
}

impl From<u64> for Scalar {
    fn from(n: u64) -> Self {
        Scalar::Number(n.into())
    }
}

impl From<usize> for Scalar {
    fn from(n: usize) -> Self {
        Scalar::Number((n as u64).into())
    }
}

impl From<f64> for Scalar {
    /// Non-finite values have no JSON representation and become their
    /// textual form.
    fn from(x: f64) -> Self {
        match serde_json::Number::from_f64(x) {
            Some(n) => Scalar::Number(n),
            None => Scalar::Text(x.to_string()),
        }
    }
}

/// Immutable unit of inter-agent communication.
///
/// Fields are only readable after construction. The builder-style
/// `with_*` methods consume the value, so a message that has been shared
/// can never change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Message {
    id: String,
    sender: String,
    role: Role,
    content: String,
    metadata: BTreeMap<String, Scalar>,
    timestamp: i64,
}

impl Message {
    pub fn new(sender: impl Into<String>, role: Role, content: impl Into<String>) -> Self {
        Self {
            id: uuid::Uuid::new_v4().to_string(),
            sender: sender.into(),
            role,
            content: content.into(),
            metadata: BTreeMap::new(),
            timestamp: now_millis(),
        }
    }

    /// Builds a message with every field given explicitly.
    pub fn from_parts(
        id: impl Into<String>,
        sender: impl Into<String>,
        role: Role,
        content: impl Into<String>,
        metadata: BTreeMap<String, Scalar>,
        timestamp: i64,
    ) -> Result<Self, PayloadError> {
        let id = id.into();
        if id.is_empty() {
            return Err(malformed("message id is empty"));
        }
        Ok(Self {
            id,
            sender: sender.into(),
            role,
            content: content.into(),
            metadata,
            timestamp,
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sender(&self) -> &str {
        &self.sender
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn metadata(&self) -> &BTreeMap<String, Scalar> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&Scalar> {
        self.metadata.get(key)
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    /// Equality on everything except the per-instance id and timestamp.
    pub fn same_payload(&self, other: &Message) -> bool {
        self.sender == other.sender
            && self.role == other.role
            && self.content == other.content
            && self.metadata == other.metadata
    }

    fn validate(&self) -> Result<(), PayloadError> {
        if self.id.is_empty() {
            return Err(malformed("message id is empty"));
        }
        Ok(())
    }
}

pub(crate) fn now_millis() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

/// Deferred result of a computation running on an agent server.
///
/// Clones share the resolution cache, so resolving any clone resolves all
/// of them. The cache is write-once.
#[derive(Clone)]
pub struct Placeholder {
    task_id: String,
    host: String,
    port: u16,
    cached: Arc<OnceLock<Message>>,
}

impl Placeholder {
    pub fn new(task_id: impl Into<String>, host: impl Into<String>, port: u16) -> Result<Self, PayloadError> {
        let task_id = task_id.into();
        if task_id.is_empty() {
            return Err(malformed("placeholder task_id is empty"));
        }
        if port == 0 {
            return Err(malformed("placeholder port must be in 1..=65535"));
        }
        Ok(Self {
            task_id,
            host: host.into(),
            port,
            cached: Arc::new(OnceLock::new()),
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn cached(&self) -> Option<&Message> {
        self.cached.get()
    }

    /// Stores the resolved message. Returns the value that ends up cached,
    /// which is the first one ever stored.
    pub fn fill(&self, msg: Message) -> &Message {
        let _ = self.cached.set(msg);
        self.cached.get().expect("cache was just set")
    }

    fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert(PLACEHOLDER_TAG.into(), Value::Bool(true));
        obj.insert("task_id".into(), Value::String(self.task_id.clone()));
        obj.insert("host".into(), Value::String(self.host.clone()));
        obj.insert("port".into(), Value::from(self.port));
        if let Some(m) = self.cached.get() {
            obj.insert("cached".into(), serde_json::to_value(m).expect("message serializes"));
        }
        Value::Object(obj)
    }

    fn from_object(obj: &Map<String, Value>) -> Result<Self, PayloadError> {
        for key in obj.keys() {
            if !matches!(key.as_str(), PLACEHOLDER_TAG | "task_id" | "host" | "port" | "cached") {
                return Err(malformed(format!("unknown placeholder field `{key}`")));
            }
        }
        let task_id = obj
            .get("task_id")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("placeholder missing task_id"))?;
        let host = obj
            .get("host")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("placeholder missing host"))?;
        let port = obj
            .get("port")
            .and_then(Value::as_u64)
            .ok_or_else(|| malformed("placeholder missing integer port"))?;
        if !(1..=65535).contains(&port) {
            return Err(malformed(format!("placeholder port {port} out of range")));
        }
        let p = Placeholder::new(task_id, host, port as u16)?;
        if let Some(cached) = obj.get("cached") {
            let m: Message = serde_json::from_value(cached.clone()).map_err(|e| malformed(e.to_string()))?;
            m.validate()?;
            p.fill(m);
        }
        Ok(p)
    }
}

impl fmt::Debug for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Placeholder")
            .field("task_id", &self.task_id)
            .field("host", &self.host)
            .field("port", &self.port)
            .field("resolved", &self.cached.get().is_some())
            .finish()
    }
}

impl PartialEq for Placeholder {
    fn eq(&self, other: &Self) -> bool {
        self.task_id == other.task_id
            && self.host == other.host
            && self.port == other.port
            && self.cached.get() == other.cached.get()
    }
}

/// Either a finished message or a token for one that is still pending.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Message(Message),
    Placeholder(Placeholder),
}

impl Payload {
    pub fn to_value(&self) -> Value {
        match self {
            Payload::Message(m) => serde_json::to_value(m).expect("message serializes"),
            Payload::Placeholder(p) => p.to_value(),
        }
    }

    pub fn from_value(value: &Value) -> Result<Self, PayloadError> {
        let obj = value.as_object().ok_or_else(|| malformed("payload is not a JSON object"))?;
        match obj.get(PLACEHOLDER_TAG) {
            Some(Value::Bool(true)) => Ok(Payload::Placeholder(Placeholder::from_object(obj)?)),
            Some(_) => Err(malformed(format!("`{PLACEHOLDER_TAG}` must be true"))),
            None => {
                let m: Message = serde_json::from_value(value.clone()).map_err(|e| malformed(e.to_string()))?;
                m.validate()?;
                Ok(Payload::Message(m))
            }
        }
    }

    pub fn as_message(&self) -> Option<&Message> {
        match self {
            Payload::Message(m) => Some(m),
            Payload::Placeholder(p) => p.cached(),
        }
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, Payload::Placeholder(_))
    }
}

impl From<Message> for Payload {
    fn from(m: Message) -> Self {
        Payload::Message(m)
    }
}

impl From<Placeholder> for Payload {
    fn from(p: Placeholder) -> Self {
        Payload::Placeholder(p)
    }
}

/// Canonical bytes of a JSON value. `serde_json::Map` is ordered by key, so
/// objects always come out with sorted keys.
pub fn canonical_json(value: &Value) -> Vec<u8> {
    serde_json::to_vec(value).expect("JSON values always serialize")
}

pub fn serialize(p: &Payload) -> Vec<u8> {
    canonical_json(&p.to_value())
}

pub fn deserialize(bytes: &[u8]) -> Result<Payload, PayloadError> {
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(format!("not UTF-8: {e}")))?;
    let value: Value = serde_json::from_str(text).map_err(|e| malformed(format!("not JSON: {e}")))?;
    Payload::from_value(&value)
}
