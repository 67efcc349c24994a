//! Agent server: hosts agents behind the RPC protocol.
//!
//! In many-to-one mode agents share a worker pool inside this process. Each
//! agent has a mailbox and is scheduled onto at most one worker at a time,
//! so its `reply` is never re-entered. In one-to-one mode every created
//! agent gets its own child process (a many-to-one server of capacity 1)
//! and this server forwards frames to it.

use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::cmp::Reverse;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::agent::{registry, Agent, AgentContext, AgentDef, AgentError};
use super::handle::{fresh_agent_id, resolve_all, ActorError, RESOLVE_SLACK};
use super::tasks::{Lookup, TaskResult, TaskTable, Waiter};
use crate::message::{now_millis, Payload};
use crate::transport::{decode_frame, pool, write_frame, ErrorCode, RemoteError, RpcError, RpcKind, RpcRequest, RpcResponse};

/// How long finished tasks stay resolvable.
pub const DEFAULT_TASK_TTL: Duration = Duration::from_secs(600);
pub const DEFAULT_HEARTBEAT_INTERVAL: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerMode {
    OneToOne,
    ManyToOne,
}

impl FromStr for ServerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('_', "-").as_str() {
            "one-to-one" => Ok(ServerMode::OneToOne),
            "many-to-one" => Ok(ServerMode::ManyToOne),
            other => Err(format!("unknown server mode `{other}` (expected one-to-one or many-to-one)")),
        }
    }
}

impl fmt::Display for ServerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServerMode::OneToOne => "one-to-one",
            ServerMode::ManyToOne => "many-to-one",
        })
    }
}

pub fn default_worker_count() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1) * 4
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen_addr: String,
    pub mode: ServerMode,
    pub capacity: usize,
    pub worker_count: usize,
    pub task_ttl: Duration,
    /// Upper bound on waiting for placeholders found in an agent's inputs.
    pub resolve_timeout: Duration,
    /// Executable launched per agent in one-to-one mode. Defaults to the
    /// current executable, which must then be the `agent-server` binary.
    pub child_exe: Option<PathBuf>,
    pub hub_url: Option<String>,
    pub heartbeat_interval: Duration,
    /// Host written into placeholders and proxies; defaults to the bound IP,
    /// or 127.0.0.1 when bound to an unspecified address.
    pub advertise_host: Option<String>,
}

impl ServerConfig {
    pub fn new(listen_addr: impl Into<String>, mode: ServerMode) -> Self {
        Self {
            listen_addr: listen_addr.into(),
            mode,
            capacity: 1024,
            worker_count: default_worker_count(),
            task_ttl: DEFAULT_TASK_TTL,
            resolve_timeout: super::handle::DEFAULT_RESOLVE_TIMEOUT,
            child_exe: None,
            hub_url: None,
            heartbeat_interval: DEFAULT_HEARTBEAT_INTERVAL,
            advertise_host: None,
        }
    }

    pub fn capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.worker_count = workers;
        self
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if self.capacity < 1 {
            return Err(ServerError::InvalidConfig("capacity must be at least 1".into()));
        }
        if self.mode == ServerMode::ManyToOne && self.worker_count < 1 {
            return Err(ServerError::InvalidConfig("worker_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("failed to bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("invalid server config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Job {
    task_id: String,
    inputs: Vec<Payload>,
}

#[derive(Default)]
struct Mailbox {
    queue: VecDeque<Job>,
    scheduled: bool,
    stopped: bool,
}

struct Hosted {
    id: String,
    def: AgentDef,
    created_at: i64,
    agent: Mutex<Box<dyn Agent>>,
    mailbox: Mutex<Mailbox>,
}

struct ChildAgent {
    def: AgentDef,
    created_at: i64,
    addr: String,
    process: Child,
    // Held open so the child notices when this server goes away.
    _stdin: Option<ChildStdin>,
}

impl Drop for ChildAgent {
    fn drop(&mut self) {
        let _ = self.process.kill();
        let _ = self.process.wait();
    }
}

enum Work {
    Run(Arc<Hosted>),
    Stop,
}

type Conn = Arc<Mutex<TcpStream>>;

struct Shared {
    cfg: ServerConfig,
    host: String,
    port: u16,
    agents: RwLock<HashMap<String, Arc<Hosted>>>,
    children: Mutex<HashMap<String, ChildAgent>>,
    forwarded: Arc<Mutex<HashMap<String, (String, Instant)>>>,
    tasks: Arc<TaskTable>,
    work: Sender<Work>,
    deadlines: Sender<(Instant, Arc<Waiter>)>,
    started: Instant,
    shutdown: Arc<AtomicBool>,
    conns: Mutex<HashMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    create_lock: Mutex<()>,
}

/// Point-in-time view of a server, as reported by `server_status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerStatus {
    pub mode: ServerMode,
    pub agent_count: usize,
    pub capacity: usize,
    pub workers: usize,
    pub uptime_s: u64,
    pub host: String,
    pub port: u16,
    pub pending_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub agent_id: String,
    pub name: String,
    pub kind: String,
    pub created_at: i64,
}

impl Shared {
    fn agent_count(&self) -> usize {
        self.agents.read().unwrap().len() + self.children.lock().unwrap().len()
    }

    fn status(&self) -> ServerStatus {
        ServerStatus {
            mode: self.cfg.mode,
            agent_count: self.agent_count(),
            capacity: self.cfg.capacity,
            workers: self.cfg.worker_count,
            uptime_s: self.started.elapsed().as_secs(),
            host: self.host.clone(),
            port: self.port,
            pending_tasks: self.tasks.len(),
        }
    }

    fn list_agents(&self) -> Vec<AgentInfo> {
        let mut out: Vec<AgentInfo> = self
            .agents
            .read()
            .unwrap()
            .values()
            .map(|h| AgentInfo {
                agent_id: h.id.clone(),
                name: h.def.name.clone(),
                kind: h.def.kind.clone(),
                created_at: h.created_at,
            })
            .collect();
        out.extend(self.children.lock().unwrap().iter().map(|(id, c)| AgentInfo {
            agent_id: id.clone(),
            name: c.def.name.clone(),
            kind: c.def.kind.clone(),
            created_at: c.created_at,
        }));
        out.sort_by(|a, b| (a.created_at, &a.agent_id).cmp(&(b.created_at, &b.agent_id)));
        out
    }

    fn create_agent(&self, mut def: AgentDef) -> Result<String, RemoteError> {
        let _guard = self.create_lock.lock().unwrap();
        if self.agent_count() >= self.cfg.capacity {
            return Err(RemoteError::new(
                ErrorCode::CapacityExceeded,
                format!("server at capacity ({})", self.cfg.capacity),
            ));
        }
        let id = def.id.clone().unwrap_or_else(|| fresh_agent_id(&def.name));
        if self.agents.read().unwrap().contains_key(&id) || self.children.lock().unwrap().contains_key(&id) {
            return Err(RemoteError::new(ErrorCode::Internal, format!("agent id `{id}` already in use")));
        }
        def.id = Some(id.clone());
        match self.cfg.mode {
            ServerMode::ManyToOne => {
                let agent = registry().instantiate(&def).map_err(agent_error)?;
                let hosted = Hosted {
                    id: id.clone(),
                    def,
                    created_at: now_millis(),
                    agent: Mutex::new(agent),
                    mailbox: Mutex::new(Mailbox::default()),
                };
                self.agents.write().unwrap().insert(id.clone(), Arc::new(hosted));
            }
            ServerMode::OneToOne => {
                if !registry().contains(&def.kind) {
                    return Err(agent_error(AgentError::UnknownKind(def.kind.clone())));
                }
                let child = self.spawn_child(&def)?;
                self.children.lock().unwrap().insert(id.clone(), child);
            }
        }
        tracing::debug!(agent_id = %id, "agent created");
        Ok(id)
    }

    fn spawn_child(&self, def: &AgentDef) -> Result<ChildAgent, RemoteError> {
        let internal = |e: String| RemoteError::new(ErrorCode::Internal, e);
        let exe = match &self.cfg.child_exe {
            Some(p) => p.clone(),
            None => std::env::current_exe().map_err(|e| internal(e.to_string()))?,
        };
        let mut process = Command::new(exe)
            .args(["--listen", &format!("{}:0", self.host), "--mode", "many-to-one"])
            .args(["--capacity", "1", "--workers", "1", "--child"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| internal(format!("spawning agent process: {e}")))?;
        let stdout = process.stdout.take().expect("stdout is piped");
        let mut line = String::new();
        BufReader::new(stdout)
            .read_line(&mut line)
            .map_err(|e| internal(format!("reading child address: {e}")))?;
        let addr = match line.trim().strip_prefix("LISTENING ") {
            Some(a) => a.to_string(),
            None => {
                let _ = process.kill();
                return Err(internal(format!("agent process did not report an address: {line:?}")));
            }
        };
        let stdin = process.stdin.take();
        let child = ChildAgent { def: def.clone(), created_at: now_millis(), addr, process, _stdin: stdin };
        pool()
            .request(&child.addr, RpcKind::CreateAgent, json!({ "def": def }), RpcKind::CreateAgent.default_timeout())
            .map_err(rpc_to_remote)?;
        Ok(child)
    }

    fn call_agent(&self, agent_id: &str, inputs: Vec<Payload>) -> Result<String, RemoteError> {
        let hosted = self.agents.read().unwrap().get(agent_id).cloned();
        if let Some(hosted) = hosted {
            let task_id = self.tasks.create();
            let schedule = {
                let mut mb = hosted.mailbox.lock().unwrap();
                if mb.stopped {
                    drop(mb);
                    self.tasks.cancel(&task_id);
                    return Err(not_found(agent_id));
                }
                mb.queue.push_back(Job { task_id: task_id.clone(), inputs });
                !std::mem::replace(&mut mb.scheduled, true)
            };
            if schedule {
                let _ = self.work.send(Work::Run(hosted));
            }
            return Ok(task_id);
        }
        let child_addr = self.children.lock().unwrap().get(agent_id).map(|c| c.addr.clone());
        let Some(child_addr) = child_addr else {
            return Err(not_found(agent_id));
        };
        let inputs: Vec<Value> = inputs.iter().map(Payload::to_value).collect();
        let resp = pool()
            .request(
                &child_addr,
                RpcKind::CallAgent,
                json!({ "agent_id": agent_id, "inputs": inputs }),
                RpcKind::CallAgent.default_timeout(),
            )
            .map_err(rpc_to_remote)?;
        let task_id = resp
            .get("task_id")
            .and_then(Value::as_str)
            .ok_or_else(|| RemoteError::new(ErrorCode::Internal, "child response missing task_id"))?
            .to_string();
        self.forwarded.lock().unwrap().insert(task_id.clone(), (child_addr, Instant::now()));
        Ok(task_id)
    }

    fn stop_agent(&self, agent_id: &str) -> Result<(), RemoteError> {
        let hosted = self.agents.write().unwrap().remove(agent_id);
        if let Some(hosted) = hosted {
            let dropped: Vec<Job> = {
                let mut mb = hosted.mailbox.lock().unwrap();
                mb.stopped = true;
                mb.queue.drain(..).collect()
            };
            for job in dropped {
                self.tasks.cancel(&job.task_id);
            }
            tracing::debug!(agent_id, "agent stopped");
            return Ok(());
        }
        let child = self.children.lock().unwrap().remove(agent_id);
        match child {
            Some(child) => {
                let _ = pool().request(
                    &child.addr,
                    RpcKind::StopAgent,
                    json!({ "agent_id": agent_id }),
                    RpcKind::StopAgent.default_timeout(),
                );
                pool().forget(&child.addr);
                Ok(())
            }
            None => Err(not_found(agent_id)),
        }
    }

    fn stop(&self) {
        if self.shutdown.swap(true, Ordering::AcqRel) {
            return;
        }
        let _ = TcpStream::connect_timeout(
            &SocketAddr::new(
                if self.host == "localhost" { [127, 0, 0, 1].into() } else { self.host.parse().unwrap_or([127, 0, 0, 1].into()) },
                self.port,
            ),
            Duration::from_millis(200),
        );
        for (_, c) in self.conns.lock().unwrap().drain() {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
        for _ in 0..self.cfg.worker_count.max(1) {
            let _ = self.work.send(Work::Stop);
        }
        self.children.lock().unwrap().clear();
    }
}

fn not_found(agent_id: &str) -> RemoteError {
    RemoteError::new(ErrorCode::AgentNotFound, format!("no agent `{agent_id}`"))
}

fn agent_error(e: AgentError) -> RemoteError {
    RemoteError::new(ErrorCode::Internal, e.to_string())
}

fn rpc_to_remote(e: RpcError) -> RemoteError {
    match e {
        RpcError::Remote(r) => r,
        RpcError::Timeout(what) => RemoteError::new(ErrorCode::Timeout, what),
        other => RemoteError::new(ErrorCode::Internal, other.to_string()),
    }
}

fn actor_to_remote(e: ActorError) -> RemoteError {
    RemoteError::new(e.code(), e.to_string())
}

fn run_job(shared: &Shared, hosted: &Hosted, job: Job) {
    let result: TaskResult = (|| {
        let inputs = resolve_all(&job.inputs, shared.cfg.resolve_timeout).map_err(actor_to_remote)?;
        let ctx = AgentContext { agent_id: hosted.id.clone(), name: hosted.def.name.clone() };
        let mut agent = hosted.agent.lock().unwrap_or_else(|p| p.into_inner());
        match catch_unwind(AssertUnwindSafe(|| agent.reply(inputs, &ctx))) {
            Ok(Ok(m)) => Ok(m),
            Ok(Err(e)) => Err(agent_error(e)),
            Err(_) => Err(RemoteError::new(ErrorCode::Internal, format!("agent `{}` panicked", hosted.id))),
        }
    })();
    if let Err(e) = &result {
        tracing::warn!(agent_id = %hosted.id, error = %e, "agent task failed");
    }
    shared.tasks.complete(&job.task_id, result);
}

fn worker_loop(shared: Arc<Shared>, rx: Receiver<Work>) {
    for work in rx.iter() {
        let hosted = match work {
            Work::Run(h) => h,
            Work::Stop => break,
        };
        let job = {
            let mut mb = hosted.mailbox.lock().unwrap();
            match mb.queue.pop_front() {
                Some(j) => j,
                None => {
                    mb.scheduled = false;
                    continue;
                }
            }
        };
        run_job(&shared, &hosted, job);
        let more = {
            let mut mb = hosted.mailbox.lock().unwrap();
            if mb.queue.is_empty() {
                mb.scheduled = false;
                false
            } else {
                true
            }
        };
        if more {
            let _ = shared.work.send(Work::Run(hosted));
        }
    }
}

struct Deadline(Instant, u64, Arc<Waiter>);

impl PartialEq for Deadline {
    fn eq(&self, other: &Self) -> bool {
        (self.0, self.1) == (other.0, other.1)
    }
}
impl Eq for Deadline {}
impl PartialOrd for Deadline {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Deadline {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0, self.1).cmp(&(other.0, other.1))
    }
}

/// Fires resolve timeouts and expires old task entries.
fn timer_loop(
    rx: Receiver<(Instant, Arc<Waiter>)>,
    tasks: Arc<TaskTable>,
    forwarded: Arc<Mutex<HashMap<String, (String, Instant)>>>,
    ttl: Duration,
    shutdown: Arc<AtomicBool>,
) {
    let mut heap: BinaryHeap<Reverse<Deadline>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut last_sweep = Instant::now();
    let sweep_every = (ttl / 4).clamp(Duration::from_millis(10), Duration::from_secs(1));
    while !shutdown.load(Ordering::Acquire) {
        let now = Instant::now();
        while heap.peek().is_some_and(|Reverse(d)| d.0 <= now) {
            let Reverse(Deadline(_, _, w)) = heap.pop().unwrap();
            w.fire(Err(RemoteError::new(ErrorCode::Timeout, "task did not finish before the deadline")));
        }
        if now.duration_since(last_sweep) >= sweep_every {
            tasks.sweep(now);
            forwarded.lock().unwrap().retain(|_, (_, at)| now.duration_since(*at) < ttl);
            last_sweep = now;
        }
        let wait = heap
            .peek()
            .map(|Reverse(d)| d.0.saturating_duration_since(now))
            .unwrap_or(sweep_every)
            .min(sweep_every);
        match rx.recv_timeout(wait) {
            Ok((at, w)) => {
                seq += 1;
                heap.push(Reverse(Deadline(at, seq, w)));
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
}

fn respond(conn: &Conn, resp: RpcResponse) {
    let mut w = conn.lock().unwrap();
    if let Err(e) = write_frame(&mut *w, &resp.encode()) {
        tracing::debug!(error = %e, "failed to write response");
    }
}

fn bad_frame(conn: &Conn, request_id: &str, msg: impl Into<String>) {
    respond(conn, RpcResponse::err(request_id, ErrorCode::BadFrame, msg));
}

fn handle_frame(shared: &Arc<Shared>, conn: &Conn, body: &[u8]) {
    let req = match RpcRequest::decode(body) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_slice::<Value>(body)
                .ok()
                .and_then(|v| v.get("request_id").and_then(Value::as_str).map(str::to_string))
                .unwrap_or_default();
            return bad_frame(conn, &id, e);
        }
    };
    let rid = req.request_id.clone();
    let p = &req.payload;
    let reply = |r: Result<Value, RemoteError>| {
        respond(
            conn,
            RpcResponse { request_id: rid.clone(), result: r.map(|v| v.as_object().cloned().unwrap_or_default()) },
        )
    };
    match req.kind {
        RpcKind::ServerStatus => reply(Ok(serde_json::to_value(shared.status()).expect("status serializes"))),
        RpcKind::ListAgents => reply(Ok(json!({ "agents": shared.list_agents() }))),
        RpcKind::CreateAgent => {
            let def = match p.get("def").cloned().map(serde_json::from_value::<AgentDef>) {
                Some(Ok(d)) => d,
                _ => return bad_frame(conn, &rid, "create_agent needs a `def` object"),
            };
            reply(shared.create_agent(def).map(|id| json!({ "agent_id": id })))
        }
        RpcKind::CallAgent => {
            let Some(agent_id) = p.get("agent_id").and_then(Value::as_str) else {
                return bad_frame(conn, &rid, "call_agent needs `agent_id`");
            };
            let inputs = match p.get("inputs").and_then(Value::as_array) {
                Some(a) => a.iter().map(Payload::from_value).collect::<Result<Vec<_>, _>>(),
                None => return bad_frame(conn, &rid, "call_agent needs an `inputs` array"),
            };
            let inputs = match inputs {
                Ok(i) => i,
                Err(e) => return bad_frame(conn, &rid, e.to_string()),
            };
            reply(
                shared
                    .call_agent(agent_id, inputs)
                    .map(|task_id| json!({ "task_id": task_id, "host": shared.host, "port": shared.port })),
            )
        }
        RpcKind::ResolveTask => {
            let Some(task_id) = p.get("task_id").and_then(Value::as_str) else {
                return bad_frame(conn, &rid, "resolve_task needs `task_id`");
            };
            let timeout = p
                .get("timeout_ms")
                .and_then(Value::as_u64)
                .map(Duration::from_millis)
                .unwrap_or(RpcKind::ResolveTask.default_timeout());
            resolve_task(shared, conn, rid.clone(), task_id.to_string(), timeout);
        }
        RpcKind::StopAgent => {
            let Some(agent_id) = p.get("agent_id").and_then(Value::as_str) else {
                return bad_frame(conn, &rid, "stop_agent needs `agent_id`");
            };
            reply(shared.stop_agent(agent_id).map(|_| json!({})))
        }
    }
}

fn task_response(request_id: &str, result: TaskResult) -> RpcResponse {
    match result {
        Ok(m) => RpcResponse::ok(request_id, json!({ "message": Payload::Message(m).to_value() })),
        Err(e) => RpcResponse { request_id: request_id.to_string(), result: Err(e) },
    }
}

fn resolve_task(shared: &Arc<Shared>, conn: &Conn, rid: String, task_id: String, timeout: Duration) {
    let forwarded = shared.forwarded.lock().unwrap().get(&task_id).map(|(a, _)| a.clone());
    if let Some(child_addr) = forwarded {
        let conn = conn.clone();
        thread::spawn(move || {
            let result = pool().request(
                &child_addr,
                RpcKind::ResolveTask,
                json!({ "task_id": task_id, "timeout_ms": timeout.as_millis() as u64 }),
                timeout + RESOLVE_SLACK,
            );
            let resp = match result {
                Ok(map) => RpcResponse { request_id: rid, result: Ok(map) },
                Err(RpcError::Remote(e)) => RpcResponse { request_id: rid, result: Err(e) },
                Err(RpcError::Timeout(w)) => RpcResponse::err(rid, ErrorCode::Timeout, w),
                Err(other) => RpcResponse::err(rid, ErrorCode::TaskNotFound, format!("agent process gone: {other}")),
            };
            respond(&conn, resp);
        });
        return;
    }
    let c = conn.clone();
    let r = rid.clone();
    let waiter = Waiter::new(move |result| respond(&c, task_response(&r, result)));
    match shared.tasks.wait(&task_id, &waiter) {
        Lookup::Ready(result) => waiter.fire(result),
        Lookup::Parked => {
            let _ = shared.deadlines.send((Instant::now() + timeout, waiter));
        }
        Lookup::Missing => respond(conn, RpcResponse::err(rid, ErrorCode::TaskNotFound, format!("no task `{task_id}`"))),
    }
}

fn serve_conn(shared: Arc<Shared>, conn_id: u64, mut stream: TcpStream) {
    let writer: Conn = match stream.try_clone() {
        Ok(w) => Arc::new(Mutex::new(w)),
        Err(_) => return,
    };
    loop {
        match decode_frame(&mut stream) {
            Ok(body) => handle_frame(&shared, &writer, &body),
            Err(e) => {
                tracing::trace!(error = %e, "connection closed");
                break;
            }
        }
    }
    shared.conns.lock().unwrap().remove(&conn_id);
}

/// A bound agent server, ready to serve.
pub struct AgentServer {
    listener: TcpListener,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl AgentServer {
    pub fn bind(cfg: ServerConfig) -> Result<Self, ServerError> {
        cfg.validate()?;
        let listener = TcpListener::bind(&cfg.listen_addr)
            .map_err(|source| ServerError::Bind { addr: cfg.listen_addr.clone(), source })?;
        let local = listener.local_addr()?;
        let host = cfg.advertise_host.clone().unwrap_or_else(|| {
            if local.ip().is_unspecified() {
                "127.0.0.1".to_string()
            } else {
                local.ip().to_string()
            }
        });
        let (work_tx, work_rx) = unbounded();
        let (dl_tx, dl_rx) = unbounded();
        let workers = match cfg.mode {
            ServerMode::ManyToOne => cfg.worker_count,
            ServerMode::OneToOne => 0,
        };
        let shared = Arc::new(Shared {
            host,
            port: local.port(),
            agents: RwLock::new(HashMap::new()),
            children: Mutex::new(HashMap::new()),
            forwarded: Arc::new(Mutex::new(HashMap::new())),
            tasks: Arc::new(TaskTable::new(cfg.task_ttl)),
            work: work_tx,
            deadlines: dl_tx,
            started: Instant::now(),
            shutdown: Arc::new(AtomicBool::new(false)),
            conns: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(0),
            create_lock: Mutex::new(()),
            cfg,
        });
        let mut threads = Vec::new();
        for i in 0..workers {
            let (s, rx) = (shared.clone(), work_rx.clone());
            threads.push(thread::Builder::new().name(format!("agent-worker-{i}")).spawn(move || worker_loop(s, rx))?);
        }
        let (tasks, fwd, ttl, stop) =
            (shared.tasks.clone(), shared.forwarded.clone(), shared.cfg.task_ttl, shared.shutdown.clone());
        threads.push(
            thread::Builder::new()
                .name("agent-server-timer".into())
                .spawn(move || timer_loop(dl_rx, tasks, fwd, ttl, stop))?,
        );
        if let Some(hub) = shared.cfg.hub_url.clone() {
            let weak = Arc::downgrade(&shared);
            let status = move || weak.upgrade().map(|s| s.status());
            crate::manager::heartbeat::spawn_heartbeat(
                hub,
                shared.cfg.heartbeat_interval,
                shared.shutdown.clone(),
                status,
            );
        }
        Ok(Self { listener, shared, threads })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Advertised `host:port`.
    pub fn addr(&self) -> String {
        format!("{}:{}", self.shared.host, self.shared.port)
    }

    pub fn status(&self) -> ServerStatus {
        self.shared.status()
    }

    pub fn stopper(&self) -> ServerStopper {
        ServerStopper(self.shared.clone())
    }

    /// Accepts connections until stopped.
    pub fn serve(self) -> Result<(), ServerError> {
        tracing::info!(addr = %self.addr(), mode = %self.shared.cfg.mode, "agent server listening");
        for stream in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::Acquire) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!(error = %e, "accept failed");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            let id = self.shared.next_conn.fetch_add(1, Ordering::Relaxed);
            if let Ok(c) = stream.try_clone() {
                self.shared.conns.lock().unwrap().insert(id, c);
            }
            let s = self.shared.clone();
            thread::Builder::new().name("agent-conn".into()).spawn(move || serve_conn(s, id, stream))?;
        }
        self.shared.stop();
        for t in self.threads {
            let _ = t.join();
        }
        tracing::info!("agent server stopped");
        Ok(())
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.addr();
        let stopper = self.stopper();
        let join = thread::spawn(move || self.serve());
        ServerHandle { addr, stopper, join: Some(join) }
    }
}

/// Stops a server from another thread.
#[derive(Clone)]
pub struct ServerStopper(Arc<Shared>);

impl ServerStopper {
    pub fn stop(&self) {
        self.0.stop();
    }
}

/// Handle to a server running on a background thread; stops it on drop.
pub struct ServerHandle {
    addr: String,
    stopper: ServerStopper,
    join: Option<JoinHandle<Result<(), ServerError>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stopper.stop();
        if let Some(j) = self.join.take() {
            let _ = j.join();
        }
        pool().forget(&self.addr);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds and serves until stopped.
pub fn run_server(cfg: ServerConfig) -> Result<(), ServerError> {
    AgentServer::bind(cfg)?.serve()
}

/// Typed client for the control operations of one server.
pub struct ServerClient {
    addr: String,
}

impl ServerClient {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into() }
    }

    fn request(&self, kind: RpcKind, payload: Value) -> Result<Map<String, Value>, ActorError> {
        Ok(pool().request(&self.addr, kind, payload, kind.default_timeout())?)
    }

    pub fn status(&self) -> Result<ServerStatus, ActorError> {
        let m = self.request(RpcKind::ServerStatus, Value::Null)?;
        serde_json::from_value(Value::Object(m))
            .map_err(|e| crate::message::PayloadError::Malformed(e.to_string()).into())
    }

    pub fn list_agents(&self) -> Result<Vec<AgentInfo>, ActorError> {
        let m = self.request(RpcKind::ListAgents, Value::Null)?;
        serde_json::from_value(m.get("agents").cloned().unwrap_or(Value::Array(vec![])))
            .map_err(|e| crate::message::PayloadError::Malformed(e.to_string()).into())
    }

    pub fn create_agent(&self, def: &AgentDef) -> Result<super::AgentRef, ActorError> {
        super::handle::create_remote(&self.addr, def)
    }

    pub fn stop_agent(&self, agent_id: &str) -> Result<(), ActorError> {
        self.request(RpcKind::StopAgent, json!({ "agent_id": agent_id }))?;
        Ok(())
    }
}
