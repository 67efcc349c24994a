//! HTTP JSON API of the hub. Every response is `{"ok": true, "data": ...}`
//! or `{"ok": false, "error": {"code", "message"}}`.

use std::net::SocketAddr;
use std::thread;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use super::registry::{HubError, Metrics, Registry, RoundSummary};
use crate::actor::{ActorError, AgentDef, ServerClient, ServerMode};
use crate::sim::{run_simulation, SimSpec};

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "ok": false, "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        let (status, code) = match &e {
            HubError::DuplicateAddress(_) => (StatusCode::CONFLICT, "DUPLICATE_ADDRESS"),
            HubError::UnknownServer(_) => (StatusCode::NOT_FOUND, "UNKNOWN_SERVER"),
            HubError::ServerDead(_) => (StatusCode::CONFLICT, "SERVER_DEAD"),
            HubError::UnknownSimulation(_) => (StatusCode::NOT_FOUND, "UNKNOWN_SIMULATION"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ActorError> for ApiError {
    fn from(e: ActorError) -> Self {
        let (status, code) = match &e {
            ActorError::AgentNotFound(_) => (StatusCode::NOT_FOUND, "AGENT_NOT_FOUND"),
            ActorError::CapacityExceeded(_) => (StatusCode::CONFLICT, "CAPACITY_EXCEEDED"),
            ActorError::UnknownAgentKind(_) | ActorError::Agent(_) => (StatusCode::BAD_REQUEST, "BAD_REQUEST"),
            ActorError::Timeout(_) => (StatusCode::GATEWAY_TIMEOUT, "TIMEOUT"),
            _ => (StatusCode::BAD_GATEWAY, "SERVER_UNREACHABLE"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.body_text())
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn ok(data: impl Serialize) -> ApiResult {
    Ok(Json(json!({ "ok": true, "data": data })))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub addr: String,
    pub mode: ServerMode,
    pub capacity: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeartbeatRequest {
    pub server_id: String,
    pub agent_count: usize,
    #[serde(default)]
    pub metrics: Metrics,
}

async fn register(State(reg): State<Registry>, body: Result<Json<RegisterRequest>, JsonRejection>) -> ApiResult {
    let Json(r) = body?;
    let server_id = reg.register(&r.addr, r.mode, r.capacity)?;
    tracing::info!(%server_id, addr = %r.addr, "server registered");
    ok(json!({ "server_id": server_id }))
}

async fn heartbeat(State(reg): State<Registry>, body: Result<Json<HeartbeatRequest>, JsonRejection>) -> ApiResult {
    let Json(h) = body?;
    reg.heartbeat(&h.server_id, h.agent_count, h.metrics)?;
    ok(Value::Null)
}

async fn list_servers(State(reg): State<Registry>) -> ApiResult {
    ok(reg.servers())
}

async fn server_metrics(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult {
    ok(reg.metric_history(&id)?)
}

/// Runs a blocking RPC against a server off the async executor.
async fn with_server<T, F>(reg: &Registry, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(ServerClient) -> Result<T, ActorError> + Send + 'static,
{
    let record = reg.usable_server(id)?;
    tokio::task::spawn_blocking(move || f(ServerClient::new(record.addr)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
        .map_err(ApiError::from)
}

async fn list_agents(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult {
    ok(with_server(&reg, &id, |c| c.list_agents()).await?)
}

async fn create_agent(
    State(reg): State<Registry>,
    Path(id): Path<String>,
    body: Result<Json<AgentDef>, JsonRejection>,
) -> ApiResult {
    let Json(def) = body?;
    let agent = with_server(&reg, &id, move |c| c.create_agent(&def)).await?;
    ok(json!({ "agent_id": agent.agent_id() }))
}

async fn stop_agent(State(reg): State<Registry>, Path((id, agent_id)): Path<(String, String)>) -> ApiResult {
    with_server(&reg, &id, move |c| c.stop_agent(&agent_id)).await?;
    ok(Value::Null)
}

async fn list_simulations(State(reg): State<Registry>) -> ApiResult {
    ok(reg.simulations())
}

/// Validates the request, then runs the simulation on a background thread.
async fn start_simulation(State(reg): State<Registry>, body: Result<Json<SimSpec>, JsonRejection>) -> ApiResult {
    let Json(spec) = body?;
    spec.plan().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.to_string()))?;
    let sim_id = format!("sim-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]);
    reg.start_simulation(&sim_id);
    let (r, id) = (reg.clone(), sim_id.clone());
    thread::Builder::new()
        .name(format!("hub-{sim_id}"))
        .spawn(move || {
            let out = run_simulation(&spec, |round| {
                r.push_round(&id, RoundSummary { round_index: round.round_index, target: round.target, stats: round.stats })
            });
            r.finish_simulation(&id, out.err().map(|e| e.to_string()));
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?;
    ok(json!({ "sim_id": sim_id }))
}

async fn get_rounds(State(reg): State<Registry>, Path(id): Path<String>) -> ApiResult {
    ok(reg.simulation(&id)?.rounds)
}

async fn post_round(
    State(reg): State<Registry>,
    Path(id): Path<String>,
    body: Result<Json<RoundSummary>, JsonRejection>,
) -> ApiResult {
    let Json(round) = body?;
    reg.push_round(&id, round);
    ok(Value::Null)
}

pub fn router(reg: Registry) -> Router {
    Router::new()
        .route("/api/register", post(register))
        .route("/api/heartbeat", post(heartbeat))
        .route("/api/servers", get(list_servers))
        .route("/api/servers/{id}/metrics", get(server_metrics))
        .route("/api/servers/{id}/agents", get(list_agents).post(create_agent))
        .route("/api/servers/{id}/agents/{agent_id}", delete(stop_agent))
        .route("/api/simulations", get(list_simulations).post(start_simulation))
        .route("/api/simulations/{id}/rounds", get(get_rounds).post(post_round))
        .with_state(reg)
}

/// Serves the API until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    reg: Registry,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(reg)).with_graceful_shutdown(shutdown).await
}

/// A hub running on its own thread; stops when dropped.
pub struct HubHandle {
    addr: SocketAddr,
    registry: Registry,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl HubHandle {
    pub fn spawn(listen: &str, registry: Registry) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(listen)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel();
        let reg = registry.clone();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = thread::Builder::new().name("agent-hub".into()).spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener converts");
                if let Err(e) = serve(listener, reg, async { rx.await.ok().unwrap_or(()) }).await {
                    tracing::error!(error = %e, "hub stopped");
                }
            });
        })?;
        Ok(Self { addr, registry, stop: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HubHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
