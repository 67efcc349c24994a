//! Lifecycle hub: a registry of agent servers kept fresh by heartbeats,
//! remote agent creation and removal, and simulation progress, all behind a
//! JSON HTTP API.

mod api;
mod client;
pub mod heartbeat;
mod registry;

pub use api::{router, serve, ApiError, HeartbeatRequest, HubHandle, RegisterRequest};
pub use client::{HubClient, HubClientError};
pub use registry::{
    wall_clock_ms, Clock, Health, HubError, MetricPoint, Metrics, Registry, RoundSummary, ServerRecord, SimState,
    SimulationRecord, ALIVE_WITHIN, METRIC_HISTORY, STALE_WITHIN,
};
