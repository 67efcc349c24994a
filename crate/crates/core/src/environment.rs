//! Shared-state environments.
//!
//! An environment keeps a key/value state, user functions that read and
//! modify it, and listeners attached to those functions that notify agents
//! when a condition holds. Environments nest: an agent attached to an
//! environment sees that environment's state and every ancestor's, but never
//! a sibling's. An environment is also an agent kind (`"environment"`), so it
//! can be hosted on an agent server and driven over RPC.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, Weak};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::actor::{self, Agent, AgentContext, AgentDef, AgentError, AgentRef, AgentRegistry, RemoteRef};
use crate::message::{canonical_json, Message, Role};

/// Name of the implicit state-writing function listeners can attach to.
pub const SET_FN: &str = "set";
const GET_FN: &str = "get";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("key not found: {0}")]
    KeyNotFound(String),
    #[error("agent `{agent}` may not access environment `{env}`")]
    AccessDenied { agent: String, env: String },
    #[error("function `{0}` is already registered")]
    DuplicateFunction(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("invocation of `{name}` failed: {reason}")]
    InvocationFailed { name: String, reason: String },
    #[error("adding `{0}` would create a cycle")]
    CycleDetected(String),
    #[error("environment `{0}` already has a parent")]
    AlreadyAttached(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

/// What a listener sees about one function invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub fn_name: String,
    pub args: Value,
    /// For `set`, the key's previous value.
    pub prior: Option<Value>,
    /// For `set`, the written value; for other functions, the return value.
    pub new: Option<Value>,
}

type PredicateFn = Arc<dyn Fn(&Event) -> bool + Send + Sync>;

/// Listener condition. Every variant except [`Predicate::Custom`] is plain
/// data and can cross a process boundary.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    Always,
    /// `prior != new`.
    Changed,
    ArgEquals { arg: String, value: Value },
    /// String argument `arg` contains `needle`.
    ArgContains { arg: String, needle: String },
    NewEquals { value: Value },
    All { of: Vec<Predicate> },
    Any { of: Vec<Predicate> },
    #[serde(skip)]
    Custom(PredicateFn),
}

impl fmt::Debug for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Custom(_) => f.write_str("Custom(..)"),
            other => write!(f, "{}", serde_json::to_string(other).unwrap_or_default()),
        }
    }
}

impl Predicate {
    pub fn custom(f: impl Fn(&Event) -> bool + Send + Sync + 'static) -> Self {
        Predicate::Custom(Arc::new(f))
    }

    pub fn key_is(key: impl Into<String>) -> Self {
        Predicate::ArgEquals { arg: "key".into(), value: Value::String(key.into()) }
    }

    pub fn holds(&self, ev: &Event) -> bool {
        match self {
            Predicate::Always => true,
            Predicate::Changed => ev.prior != ev.new,
            Predicate::ArgEquals { arg, value } => ev.args.get(arg) == Some(value),
            Predicate::ArgContains { arg, needle } => {
                ev.args.get(arg).and_then(Value::as_str).is_some_and(|s| s.contains(needle.as_str()))
            }
            Predicate::NewEquals { value } => ev.new.as_ref() == Some(value),
            Predicate::All { of } => of.iter().all(|p| p.holds(ev)),
            Predicate::Any { of } => of.iter().any(|p| p.holds(ev)),
            Predicate::Custom(f) => f(ev),
        }
    }
}

/// Condition attached to a function; when it holds after an invocation,
/// every target receives a notification message.
#[derive(Debug, Clone)]
pub struct Listener {
    pub fn_name: String,
    pub predicate: Predicate,
    pub targets: Vec<AgentRef>,
}

struct Attached {
    id: String,
    listener: Listener,
    fired: AtomicU64,
}

/// State view handed to user functions. Writes are staged and only applied
/// if the function returns `Ok`.
pub struct StateTxn<'a> {
    base: &'a RwLock<HashMap<String, Value>>,
    writes: HashMap<String, Value>,
}

impl StateTxn<'_> {
    pub fn get(&self, key: &str) -> Option<Value> {
        self.writes.get(key).cloned().or_else(|| self.base.read().unwrap().get(key).cloned())
    }

    pub fn set(&mut self, key: impl Into<String>, value: Value) {
        self.writes.insert(key.into(), value);
    }
}

type EnvFn = Arc<dyn Fn(&mut StateTxn<'_>, &Value) -> Result<Value, String> + Send + Sync>;

#[derive(Clone)]
pub enum Member {
    Agent(AgentRef),
    Env(Arc<Environment>),
}

pub struct Environment {
    id: String,
    name: String,
    me: Weak<Environment>,
    state: RwLock<HashMap<String, Value>>,
    mutation: Mutex<()>,
    functions: RwLock<HashMap<String, EnvFn>>,
    listeners: RwLock<Vec<Arc<Attached>>>,
    children: RwLock<Vec<Member>>,
    parent: RwLock<Option<Weak<Environment>>>,
    next_listener: AtomicU64,
}

impl fmt::Debug for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment").field("id", &self.id).field("name", &self.name).finish()
    }
}

impl Environment {
    pub fn new(name: impl Into<String>) -> Arc<Self> {
        let name = name.into();
        Arc::new_cyclic(|me| Self {
            id: format!("env-{}", uuid::Uuid::new_v4().simple()),
            name,
            me: me.clone(),
            state: RwLock::new(HashMap::new()),
            mutation: Mutex::new(()),
            functions: RwLock::new(HashMap::new()),
            listeners: RwLock::new(Vec::new()),
            children: RwLock::new(Vec::new()),
            parent: RwLock::new(None),
            next_listener: AtomicU64::new(0),
        })
    }

    /// Environment with a `speak(speaker, text)` function that appends to a
    /// `history` list and returns the text.
    pub fn chatroom(name: impl Into<String>) -> Arc<Self> {
        let env = Self::new(name);
        env.register_fn("speak", |state, args| {
            let text = args.get("text").and_then(Value::as_str).ok_or("speak needs `text`")?.to_string();
            let speaker = args.get("speaker").cloned().unwrap_or(Value::Null);
            let mut history = match state.get("history") {
                Some(Value::Array(a)) => a,
                _ => Vec::new(),
            };
            history.push(json!({ "speaker": speaker, "text": text }));
            state.set("history", Value::Array(history));
            Ok(Value::String(text))
        })
        .expect("fresh environment has no functions");
        env
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn parent(&self) -> Option<Arc<Environment>> {
        self.parent.read().unwrap().as_ref().and_then(Weak::upgrade)
    }

    pub fn get(&self, key: &str) -> Result<Value, EnvError> {
        self.state.read().unwrap().get(key).cloned().ok_or_else(|| EnvError::KeyNotFound(key.to_string()))
    }

    /// Looks `key` up here, then in each ancestor.
    pub fn lookup(&self, key: &str) -> Result<Value, EnvError> {
        if let Ok(v) = self.get(key) {
            return Ok(v);
        }
        let mut cur = self.parent();
        while let Some(env) = cur {
            if let Ok(v) = env.get(key) {
                return Ok(v);
            }
            cur = env.parent();
        }
        Err(EnvError::KeyNotFound(key.to_string()))
    }

    /// Reads on behalf of an agent, enforcing the visibility rule.
    pub fn get_as(&self, agent_id: &str, key: &str) -> Result<Value, EnvError> {
        if !self.can_access(agent_id) {
            return Err(EnvError::AccessDenied { agent: agent_id.to_string(), env: self.name.clone() });
        }
        self.lookup(key)
    }

    /// True when the agent is attached here or anywhere below.
    pub fn can_access(&self, agent_id: &str) -> bool {
        self.children.read().unwrap().iter().any(|m| match m {
            Member::Agent(a) => a.agent_id() == agent_id,
            Member::Env(e) => e.can_access(agent_id),
        })
    }

    pub fn snapshot(&self) -> BTreeMap<String, Value> {
        self.state.read().unwrap().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Writes one key and returns the previous value. Listeners on `set`
    /// fire after the write commits.
    pub fn set(&self, key: impl Into<String>, value: Value) -> Option<Value> {
        let key = key.into();
        let prior = {
            let _m = self.mutation.lock().unwrap();
            self.state.write().unwrap().insert(key.clone(), value.clone())
        };
        self.notify(Event {
            fn_name: SET_FN.into(),
            args: json!({ "key": key, "value": value }),
            prior: prior.clone(),
            new: Some(value),
        });
        prior
    }

    pub fn register_fn<F>(&self, name: impl Into<String>, f: F) -> Result<(), EnvError>
    where
        F: Fn(&mut StateTxn<'_>, &Value) -> Result<Value, String> + Send + Sync + 'static,
    {
        let name = name.into();
        if name == SET_FN || name == GET_FN {
            return Err(EnvError::DuplicateFunction(name));
        }
        let mut fns = self.functions.write().unwrap();
        if fns.contains_key(&name) {
            return Err(EnvError::DuplicateFunction(name));
        }
        fns.insert(name, Arc::new(f));
        Ok(())
    }

    fn has_fn(&self, name: &str) -> bool {
        name == SET_FN || name == GET_FN || self.functions.read().unwrap().contains_key(name)
    }

    /// Runs a function under the mutation lock. A failing function leaves
    /// the state untouched and fires no listeners.
    pub fn invoke(&self, fn_name: &str, args: Value) -> Result<Value, EnvError> {
        match fn_name {
            SET_FN => {
                let key = args
                    .get("key")
                    .and_then(Value::as_str)
                    .ok_or_else(|| EnvError::BadRequest("set needs a string `key`".into()))?;
                let value = args.get("value").cloned().unwrap_or(Value::Null);
                return Ok(self.set(key, value).unwrap_or(Value::Null));
            }
            GET_FN => {
                let key = args
                    .get("key")
                    .and_then(Value::as_str)
                    .ok_or_else(|| EnvError::BadRequest("get needs a string `key`".into()))?;
                return self.get(key);
            }
            _ => {}
        }
        let f = self
            .functions
            .read()
            .unwrap()
            .get(fn_name)
            .cloned()
            .ok_or_else(|| EnvError::UnknownFunction(fn_name.to_string()))?;
        let ret = {
            let _m = self.mutation.lock().unwrap();
            let mut txn = StateTxn { base: &self.state, writes: HashMap::new() };
            let ret = f(&mut txn, &args)
                .map_err(|reason| EnvError::InvocationFailed { name: fn_name.to_string(), reason })?;
            if !txn.writes.is_empty() {
                self.state.write().unwrap().extend(txn.writes);
            }
            ret
        };
        self.notify(Event { fn_name: fn_name.to_string(), args, prior: None, new: Some(ret.clone()) });
        Ok(ret)
    }

    /// Attaches a listener and returns its id.
    pub fn add_listener(&self, listener: Listener) -> Result<String, EnvError> {
        if !self.has_fn(&listener.fn_name) {
            return Err(EnvError::UnknownFunction(listener.fn_name));
        }
        let n = self.next_listener.fetch_add(1, Ordering::Relaxed);
        let id = format!("{}-listener-{n}", self.name);
        self.listeners.write().unwrap().push(Arc::new(Attached {
            id: id.clone(),
            listener,
            fired: AtomicU64::new(0),
        }));
        Ok(id)
    }

    /// Times the listener's predicate held.
    pub fn fired_count(&self, listener_id: &str) -> Option<u64> {
        self.listeners
            .read()
            .unwrap()
            .iter()
            .find(|a| a.id == listener_id)
            .map(|a| a.fired.load(Ordering::Relaxed))
    }

    pub fn add_child(&self, child: Member) -> Result<(), EnvError> {
        if let Member::Env(env) = &child {
            if std::ptr::eq(Arc::as_ptr(env), self) || self.has_ancestor(env) {
                return Err(EnvError::CycleDetected(env.name.clone()));
            }
            let mut parent = env.parent.write().unwrap();
            if parent.as_ref().and_then(Weak::upgrade).is_some() {
                return Err(EnvError::AlreadyAttached(env.name.clone()));
            }
            *parent = Some(self.me.clone());
        }
        self.children.write().unwrap().push(child);
        Ok(())
    }

    pub fn attach_agent(&self, agent: AgentRef) {
        self.add_child(Member::Agent(agent)).expect("attaching an agent cannot create a cycle");
    }

    pub fn add_env(&self, env: Arc<Environment>) -> Result<(), EnvError> {
        self.add_child(Member::Env(env))
    }

    pub fn children(&self) -> Vec<Member> {
        self.children.read().unwrap().clone()
    }

    pub fn agents(&self) -> Vec<AgentRef> {
        self.children
            .read()
            .unwrap()
            .iter()
            .filter_map(|m| match m {
                Member::Agent(a) => Some(a.clone()),
                Member::Env(_) => None,
            })
            .collect()
    }

    fn has_ancestor(&self, candidate: &Arc<Environment>) -> bool {
        let mut cur = self.parent();
        while let Some(env) = cur {
            if Arc::ptr_eq(&env, candidate) {
                return true;
            }
            cur = env.parent();
        }
        false
    }

    /// Delivers notifications for `ev` in attachment order. Runs after the
    /// mutation lock is released.
    fn notify(&self, ev: Event) {
        let matching: Vec<Arc<Attached>> = self
            .listeners
            .read()
            .unwrap()
            .iter()
            .filter(|a| a.listener.fn_name == ev.fn_name && a.listener.predicate.holds(&ev))
            .cloned()
            .collect();
        for a in matching {
            a.fired.fetch_add(1, Ordering::Relaxed);
            let content = match &ev.new {
                Some(Value::String(s)) => s.clone(),
                _ => String::from_utf8(canonical_json(&serde_json::to_value(&ev).expect("event serializes")))
                    .expect("JSON is UTF-8"),
            };
            let msg = Message::new(&self.name, Role::System, content)
                .with_metadata("fn_name", ev.fn_name.as_str())
                .with_metadata("listener_id", a.id.as_str());
            for target in &a.listener.targets {
                if let Err(e) = actor::call(target, msg.clone()) {
                    tracing::warn!(env = %self.name, target = %target.agent_id(), error = %e, "notification failed");
                }
            }
        }
    }
}

/// Request understood by a hosted environment, sent as JSON message content.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EnvRequest {
    Get { key: String },
    Set { key: String, value: Value },
    Invoke { function: String, #[serde(default)] args: Value },
    Listen { fn_name: String, predicate: Predicate, targets: Vec<RemoteRef> },
}

impl EnvRequest {
    pub fn to_message(&self, sender: &str) -> Message {
        let body = canonical_json(&serde_json::to_value(self).expect("request serializes"));
        Message::new(sender, Role::User, String::from_utf8(body).expect("JSON is UTF-8"))
    }
}

/// Parses a hosted environment's reply into the returned JSON value.
pub fn parse_env_reply(msg: &Message) -> Result<Value, EnvError> {
    serde_json::from_str(msg.content()).map_err(|e| EnvError::BadRequest(e.to_string()))
}

/// An environment hosted as an agent. Each input message carries one
/// [`EnvRequest`]; the reply content is the JSON result.
pub struct EnvironmentAgent {
    env: Arc<Environment>,
}

impl EnvironmentAgent {
    pub fn new(env: Arc<Environment>) -> Self {
        Self { env }
    }

    fn handle(&self, req: EnvRequest) -> Result<Value, EnvError> {
        match req {
            EnvRequest::Get { key } => self.env.get(&key),
            EnvRequest::Set { key, value } => Ok(self.env.set(key, value).unwrap_or(Value::Null)),
            EnvRequest::Invoke { function, args } => self.env.invoke(&function, args),
            EnvRequest::Listen { fn_name, predicate, targets } => {
                let targets = targets.iter().map(AgentRef::from_remote_ref).collect();
                self.env.add_listener(Listener { fn_name, predicate, targets }).map(Value::String)
            }
        }
    }
}

impl Agent for EnvironmentAgent {
    fn reply(&mut self, inputs: Vec<Message>, _ctx: &AgentContext) -> Result<Message, AgentError> {
        let mut last = Value::Null;
        for m in inputs {
            if m.role() == Role::System {
                continue;
            }
            let req: EnvRequest =
                serde_json::from_str(m.content()).map_err(|e| AgentError::Failed(format!("bad environment request: {e}")))?;
            last = self.handle(req).map_err(|e| AgentError::Failed(e.to_string()))?;
        }
        let body = String::from_utf8(canonical_json(&last)).expect("JSON is UTF-8");
        Ok(Message::new(self.env.name(), Role::Assistant, body))
    }
}

pub(crate) fn register_kinds(reg: &AgentRegistry) {
    reg.register("environment", |def: &AgentDef| {
        let env = match def.params.get("preset").and_then(Value::as_str) {
            Some("chatroom") => Environment::chatroom(&def.name),
            Some(other) => return Err(AgentError::InvalidParams(format!("unknown environment preset `{other}`"))),
            None => Environment::new(&def.name),
        };
        Ok(Box::new(EnvironmentAgent::new(env)))
    });
}
