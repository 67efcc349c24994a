//! Blocking client for the hub API.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use super::api::{HeartbeatRequest, RegisterRequest};
use super::registry::{Metrics, RoundSummary, ServerRecord};
use crate::actor::{AgentDef, AgentInfo, ServerMode};
use crate::sim::SimSpec;

#[derive(Debug, Error)]
pub enum HubClientError {
    #[error("hub unreachable: {0}")]
    Transport(String),
    #[error("hub error {code}: {message}")]
    Api { code: String, message: String },
    #[error("unexpected hub response: {0}")]
    Malformed(String),
}

impl HubClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            HubClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

pub struct HubClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl HubClient {
    pub fn new(base: impl Into<String>) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("HTTP client builds");
        Self { base: base.into().trim_end_matches('/').to_string(), http }
    }

    fn unwrap<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T, HubClientError> {
        let v: Value = resp.json().map_err(|e| HubClientError::Malformed(e.to_string()))?;
        if v.get("ok").and_then(Value::as_bool) == Some(true) {
            return serde_json::from_value(v.get("data").cloned().unwrap_or(Value::Null))
                .map_err(|e| HubClientError::Malformed(e.to_string()));
        }
        let field = |k: &str| v.pointer(&format!("/error/{k}")).and_then(Value::as_str).unwrap_or("").to_string();
        Err(HubClientError::Api { code: field("code"), message: field("message") })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, HubClientError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base))
            .send()
            .map_err(|e| HubClientError::Transport(e.to_string()))?;
        Self::unwrap(resp)
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T, HubClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| HubClientError::Transport(e.to_string()))?;
        Self::unwrap(resp)
    }

    pub fn register(&self, addr: &str, mode: ServerMode, capacity: usize) -> Result<String, HubClientError> {
        let v: Value = self.post("/api/register", &RegisterRequest { addr: addr.into(), mode, capacity })?;
        v.get("server_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| HubClientError::Malformed("register response lacks server_id".into()))
    }

    pub fn heartbeat(&self, server_id: &str, agent_count: usize, metrics: Metrics) -> Result<(), HubClientError> {
        let _: Value =
            self.post("/api/heartbeat", &HeartbeatRequest { server_id: server_id.into(), agent_count, metrics })?;
        Ok(())
    }

    pub fn servers(&self) -> Result<Vec<ServerRecord>, HubClientError> {
        self.get("/api/servers")
    }

    pub fn agents(&self, server_id: &str) -> Result<Vec<AgentInfo>, HubClientError> {
        self.get(&format!("/api/servers/{server_id}/agents"))
    }

    pub fn create_agent(&self, server_id: &str, def: &AgentDef) -> Result<String, HubClientError> {
        let v: Value = self.post(&format!("/api/servers/{server_id}/agents"), def)?;
        v.get("agent_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| HubClientError::Malformed("create response lacks agent_id".into()))
    }

    pub fn stop_agent(&self, server_id: &str, agent_id: &str) -> Result<(), HubClientError> {
        let resp = self
            .http
            .delete(format!("{}/api/servers/{server_id}/agents/{agent_id}", self.base))
            .send()
            .map_err(|e| HubClientError::Transport(e.to_string()))?;
        let _: Value = Self::unwrap(resp)?;
        Ok(())
    }

    pub fn start_simulation(&self, spec: &SimSpec) -> Result<String, HubClientError> {
        let v: Value = self.post("/api/simulations", spec)?;
        v.get("sim_id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| HubClientError::Malformed("response lacks sim_id".into()))
    }

    pub fn post_round(&self, sim_id: &str, round: &RoundSummary) -> Result<(), HubClientError> {
        let _: Value = self.post(&format!("/api/simulations/{sim_id}/rounds"), round)?;
        Ok(())
    }

    pub fn rounds(&self, sim_id: &str) -> Result<Vec<RoundSummary>, HubClientError> {
        self.get(&format!("/api/simulations/{sim_id}/rounds"))
    }

    /// Raw GET, for endpoints without a typed wrapper.
    pub fn get_json(&self, path: &str) -> Result<Value, HubClientError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base))
            .send()
            .map_err(|e| HubClientError::Transport(e.to_string()))?;
        resp.json().map_err(|e| HubClientError::Malformed(e.to_string()))
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, HubClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| HubClientError::Transport(e.to_string()))?;
        resp.json().map_err(|e| HubClientError::Malformed(e.to_string()))
    }
}
