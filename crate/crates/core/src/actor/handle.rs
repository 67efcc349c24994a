use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::agent::{registry, Agent, AgentContext, AgentDef, AgentError};
use crate::message::{Message, Payload, PayloadError, Placeholder};
use crate::transport::{pool, ErrorCode, RpcError, RpcKind};

/// Default wait for a placeholder to resolve.
pub const DEFAULT_RESOLVE_TIMEOUT: Duration = Duration::from_secs(30);

/// Extra client-side slack over the server-side resolve deadline, so the
/// server's TIMEOUT response arrives before the client gives up.
pub(crate) const RESOLVE_SLACK: Duration = Duration::from_millis(500);

#[derive(Debug, Error)]
pub enum ActorError {
    #[error("unknown agent kind `{0}`")]
    UnknownAgentKind(String),
    #[error("agent not found: {0}")]
    AgentNotFound(String),
    #[error("task not found: {0}")]
    TaskNotFound(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("server capacity exceeded: {0}")]
    CapacityExceeded(String),
    #[error("agent `{0}` is already a proxy")]
    NotLocal(String),
    #[error("agent failed: {0}")]
    Agent(#[from] AgentError),
    #[error("bad payload: {0}")]
    Payload(#[from] PayloadError),
    #[error("remote {code}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error(transparent)]
    Rpc(RpcError),
}

impl From<RpcError> for ActorError {
    fn from(e: RpcError) -> Self {
        match e {
            RpcError::Remote(r) => match r.code {
                ErrorCode::AgentNotFound => ActorError::AgentNotFound(r.message),
                ErrorCode::TaskNotFound => ActorError::TaskNotFound(r.message),
                ErrorCode::Timeout => ActorError::Timeout(r.message),
                ErrorCode::CapacityExceeded => ActorError::CapacityExceeded(r.message),
                code => ActorError::Remote { code, message: r.message },
            },
            RpcError::Timeout(what) => ActorError::Timeout(what),
            other => ActorError::Rpc(other),
        }
    }
}

impl ActorError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ActorError::AgentNotFound(_) => ErrorCode::AgentNotFound,
            ActorError::TaskNotFound(_) => ErrorCode::TaskNotFound,
            ActorError::Timeout(_) => ErrorCode::Timeout,
            ActorError::CapacityExceeded(_) => ErrorCode::CapacityExceeded,
            ActorError::Payload(_) => ErrorCode::BadFrame,
            ActorError::Remote { code, .. } => *code,
            _ => ErrorCode::Internal,
        }
    }
}

/// An agent living in this process. The mutex is its mailbox: callers queue
/// on it and the agent handles one input batch at a time.
pub(crate) struct LocalAgent {
    pub(crate) def: AgentDef,
    pub(crate) agent: Mutex<Box<dyn Agent>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Location {
    Local,
    Remote { host: String, port: u16 },
}

/// Handle to a local agent, or a proxy for one hosted on an agent server.
#[derive(Clone)]
pub struct AgentRef {
    id: String,
    name: String,
    target: Target,
}

#[derive(Clone)]
enum Target {
    Local(Arc<LocalAgent>),
    Remote { host: String, port: u16 },
}

/// Wire form of a proxy reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRef {
    pub agent_id: String,
    pub name: String,
    pub host: String,
    pub port: u16,
}

impl fmt::Debug for AgentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentRef")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("location", &self.location())
            .finish()
    }
}

impl AgentRef {
    pub fn agent_id(&self) -> &str {
        &self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn location(&self) -> Location {
        match &self.target {
            Target::Local(_) => Location::Local,
            Target::Remote { host, port } => Location::Remote { host: host.clone(), port: *port },
        }
    }

    pub fn is_proxy(&self) -> bool {
        matches!(self.target, Target::Remote { .. })
    }

    /// `host:port` of the hosting server, for proxies.
    pub fn server_addr(&self) -> Option<String> {
        match &self.target {
            Target::Remote { host, port } => Some(format!("{host}:{port}")),
            Target::Local(_) => None,
        }
    }

    /// Definition the agent was spawned from; only local agents keep it.
    pub fn def(&self) -> Option<&AgentDef> {
        match &self.target {
            Target::Local(a) => Some(&a.def),
            Target::Remote { .. } => None,
        }
    }

    pub fn proxy(agent_id: impl Into<String>, name: impl Into<String>, host: impl Into<String>, port: u16) -> Self {
        Self { id: agent_id.into(), name: name.into(), target: Target::Remote { host: host.into(), port } }
    }

    pub fn to_remote_ref(&self) -> Option<RemoteRef> {
        match &self.target {
            Target::Remote { host, port } => Some(RemoteRef {
                agent_id: self.id.clone(),
                name: self.name.clone(),
                host: host.clone(),
                port: *port,
            }),
            Target::Local(_) => None,
        }
    }

    pub fn from_remote_ref(r: &RemoteRef) -> Self {
        Self::proxy(r.agent_id.clone(), r.name.clone(), r.host.clone(), r.port)
    }

    pub(crate) fn local(id: String, agent: Arc<LocalAgent>) -> Self {
        Self { id, name: agent.def.name.clone(), target: Target::Local(agent) }
    }
}

pub(crate) fn fresh_agent_id(name: &str) -> String {
    let uuid = uuid::Uuid::new_v4().simple().to_string();
    format!("{name}-{}", &uuid[..12])
}

/// Instantiates `def` in this process.
pub fn spawn_local(def: AgentDef) -> Result<AgentRef, ActorError> {
    let agent = registry().instantiate(&def).map_err(|e| match e {
        AgentError::UnknownKind(k) => ActorError::UnknownAgentKind(k),
        other => ActorError::Agent(other),
    })?;
    let id = def.id.clone().unwrap_or_else(|| fresh_agent_id(&def.name));
    Ok(AgentRef::local(id, Arc::new(LocalAgent { def, agent: Mutex::new(agent) })))
}

/// Ships a local agent's definition to an agent server and returns a proxy
/// that accepts the same calls. The proxy keeps the agent id.
pub fn to_dist(agent: &AgentRef, server: &str) -> Result<AgentRef, ActorError> {
    let def = agent.def().ok_or_else(|| ActorError::NotLocal(agent.id.clone()))?;
    let mut def = def.clone();
    def.id = Some(agent.id.clone());
    create_remote(server, &def)
}

/// Creates an agent directly on a server from its definition.
pub fn create_remote(server: &str, def: &AgentDef) -> Result<AgentRef, ActorError> {
    let resp = pool().request(
        server,
        RpcKind::CreateAgent,
        json!({ "def": def }),
        RpcKind::CreateAgent.default_timeout(),
    )?;
    let agent_id = str_field(&resp, "agent_id")?;
    let (host, port) = server_host_port(server)?;
    Ok(AgentRef::proxy(agent_id, def.name.clone(), host, port))
}

fn server_host_port(server: &str) -> Result<(String, u16), ActorError> {
    let (host, port) = server
        .rsplit_once(':')
        .ok_or_else(|| PayloadError::Malformed(format!("server address `{server}` lacks a port")))?;
    let port = port
        .parse::<u16>()
        .map_err(|_| PayloadError::Malformed(format!("bad port in `{server}`")))?;
    Ok((host.to_string(), port))
}

fn str_field(obj: &Map<String, Value>, key: &str) -> Result<String, ActorError> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| PayloadError::Malformed(format!("response missing `{key}`")).into())
}

/// Sends one payload to an agent.
///
/// Local agents run immediately and return a [`Payload::Message`]. Proxies
/// return a [`Payload::Placeholder`] as soon as the server has queued the
/// work.
pub fn call(agent: &AgentRef, input: impl Into<Payload>) -> Result<Payload, ActorError> {
    call_many(agent, vec![input.into()])
}

pub fn call_many(agent: &AgentRef, inputs: Vec<Payload>) -> Result<Payload, ActorError> {
    match &agent.target {
        Target::Local(local) => {
            let msgs = resolve_all(&inputs, DEFAULT_RESOLVE_TIMEOUT)?;
            let ctx = AgentContext { agent_id: agent.id.clone(), name: local.def.name.clone() };
            let mut a = local.agent.lock().unwrap_or_else(|p| p.into_inner());
            Ok(Payload::Message(a.reply(msgs, &ctx)?))
        }
        Target::Remote { host, port } => {
            let addr = format!("{host}:{port}");
            let inputs: Vec<Value> = inputs.iter().map(Payload::to_value).collect();
            let resp = pool().request(
                &addr,
                RpcKind::CallAgent,
                json!({ "agent_id": agent.id, "inputs": inputs }),
                RpcKind::CallAgent.default_timeout(),
            )?;
            Ok(Payload::Placeholder(placeholder_from_response(&resp)?))
        }
    }
}

pub(crate) fn placeholder_from_response(resp: &Map<String, Value>) -> Result<Placeholder, ActorError> {
    let task_id = str_field(resp, "task_id")?;
    let host = str_field(resp, "host")?;
    let port = resp
        .get("port")
        .and_then(Value::as_u64)
        .filter(|p| (1..=65535).contains(p))
        .ok_or_else(|| PayloadError::Malformed("response missing valid `port`".into()))?;
    Ok(Placeholder::new(task_id, host, port as u16)?)
}

/// Blocks until the placeholder's task finishes. A placeholder that has been
/// resolved before returns its cached message without any network traffic.
pub fn resolve(p: &Placeholder, timeout: Duration) -> Result<Message, ActorError> {
    if let Some(m) = p.cached() {
        return Ok(m.clone());
    }
    let resp = pool().request(
        &p.addr(),
        RpcKind::ResolveTask,
        json!({ "task_id": p.task_id(), "timeout_ms": timeout.as_millis() as u64 }),
        timeout + RESOLVE_SLACK,
    )?;
    let msg = resp
        .get("message")
        .ok_or_else(|| PayloadError::Malformed("resolve response missing `message`".into()))?;
    let msg: Message = match Payload::from_value(msg)? {
        Payload::Message(m) => m,
        Payload::Placeholder(_) => {
            return Err(PayloadError::Malformed("task resolved to a placeholder".into()).into());
        }
    };
    Ok(p.fill(msg).clone())
}

pub fn resolve_payload(p: &Payload, timeout: Duration) -> Result<Message, ActorError> {
    match p {
        Payload::Message(m) => Ok(m.clone()),
        Payload::Placeholder(ph) => resolve(ph, timeout),
    }
}

/// Resolves every placeholder in order, before an agent sees its inputs.
pub fn resolve_all(inputs: &[Payload], timeout: Duration) -> Result<Vec<Message>, ActorError> {
    inputs.iter().map(|p| resolve_payload(p, timeout)).collect()
}
