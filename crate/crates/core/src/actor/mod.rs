//! Actor runtime: local agents, proxies for remote ones, placeholders, and
//! the agent server that hosts agents behind the RPC protocol.
//!
//! Workflow code written against [`AgentRef`] runs unchanged whether the
//! agents are local or have been moved to servers with [`to_dist`]; the only
//! visible difference is that proxy calls return placeholders immediately.

mod agent;
mod builtin;
mod handle;
mod server;
mod tasks;

pub use agent::{registry, Agent, AgentContext, AgentDef, AgentError, AgentFactory, AgentRegistry};
pub use builtin::{Echo, PureFn, Recorder, Sleeper};
pub use handle::{
    call, call_many, create_remote, resolve, resolve_all, resolve_payload, spawn_local, to_dist, ActorError,
    AgentRef, Location, RemoteRef, DEFAULT_RESOLVE_TIMEOUT,
};
pub use server::{
    default_worker_count, run_server, AgentInfo, AgentServer, ServerClient, ServerConfig, ServerError,
    ServerHandle, ServerMode, ServerStatus, ServerStopper, DEFAULT_HEARTBEAT_INTERVAL, DEFAULT_TASK_TTL,
};
