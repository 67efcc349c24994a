//! Request and response bodies carried inside frames.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::message::canonical_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpcKind {
    CreateAgent,
    CallAgent,
    ResolveTask,
    StopAgent,
    ListAgents,
    ServerStatus,
}

impl RpcKind {
    /// Control operations fail fast; generation calls may be slow.
    pub fn default_timeout(self) -> std::time::Duration {
        match self {
            RpcKind::CallAgent | RpcKind::ResolveTask => std::time::Duration::from_secs(30),
            _ => std::time::Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    AgentNotFound,
    TaskNotFound,
    Timeout,
    BadFrame,
    CapacityExceeded,
    Internal,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorCode::AgentNotFound => "AGENT_NOT_FOUND",
            ErrorCode::TaskNotFound => "TASK_NOT_FOUND",
            ErrorCode::Timeout => "TIMEOUT",
            ErrorCode::BadFrame => "BAD_FRAME",
            ErrorCode::CapacityExceeded => "CAPACITY_EXCEEDED",
            ErrorCode::Internal => "INTERNAL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteError {
    pub code: ErrorCode,
    pub message: String,
}

impl RemoteError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for RemoteError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpcRequest {
    pub request_id: String,
    pub kind: RpcKind,
    pub payload: Map<String, Value>,
}

impl RpcRequest {
    pub fn new(kind: RpcKind, payload: Value) -> Self {
        let payload = match payload {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        Self { request_id: uuid::Uuid::new_v4().to_string(), kind, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        canonical_json(&serde_json::to_value(self).expect("request serializes"))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let req: RpcRequest = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if req.request_id.is_empty() {
            return Err("empty request_id".into());
        }
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcResponse {
    pub request_id: String,
    pub result: Result<Map<String, Value>, RemoteError>,
}

impl RpcResponse {
    pub fn ok(request_id: impl Into<String>, payload: Value) -> Self {
        let payload = match payload {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self { request_id: request_id.into(), result: Ok(payload) }
    }

    pub fn err(request_id: impl Into<String>, code: ErrorCode, message: impl Into<String>) -> Self {
        Self { request_id: request_id.into(), result: Err(RemoteError::new(code, message)) }
    }

    pub fn is_ok(&self) -> bool {
        self.result.is_ok()
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = match &self.result {
            Ok(p) => json!({"request_id": self.request_id, "ok": true, "payload": p}),
            Err(e) => json!({"request_id": self.request_id, "ok": false, "error": e}),
        };
        canonical_json(&body)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let v: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("response is not an object")?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "request_id" | "ok" | "payload" | "error") {
                return Err(format!("unknown response field `{key}`"));
            }
        }
        let request_id = obj
            .get("request_id")
            .and_then(Value::as_str)
            .ok_or("response missing request_id")?
            .to_string();
        let ok = obj.get("ok").and_then(Value::as_bool).ok_or("response missing ok")?;
        let result = match (ok, obj.get("payload"), obj.get("error")) {
            (true, Some(Value::Object(p)), None) => Ok(p.clone()),
            (false, None, Some(e)) => Err(serde_json::from_value(e.clone()).map_err(|e| e.to_string())?),
            _ => return Err("response must carry exactly one of payload/error matching ok".into()),
        };
        Ok(Self { request_id, result })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let mut req = RpcRequest::new(RpcKind::ServerStatus, Value::Null);
        req.request_id = "r1".into();
        assert_eq!(
            String::from_utf8(req.encode()).unwrap(),
            r#"{"kind":"server_status","payload":{},"request_id":"r1"}"#
        );
    }

    #[test]
    fn response_wire_shape() {
        let ok = RpcResponse::ok("r1", json!({"b": 1, "a": 2}));
        assert_eq!(String::from_utf8(ok.encode()).unwrap(), r#"{"ok":true,"payload":{"a":2,"b":1},"request_id":"r1"}"#);
        let err = RpcResponse::err("r2", ErrorCode::AgentNotFound, "gone");
        assert_eq!(
            String::from_utf8(err.encode()).unwrap(),
            r#"{"error":{"code":"AGENT_NOT_FOUND","message":"gone"},"ok":false,"request_id":"r2"}"#
        );
        assert_eq!(RpcResponse::decode(&err.encode()).unwrap(), err);
    }

    #[test]
    fn response_needs_exactly_one_body() {
        assert!(RpcResponse::decode(br#"{"ok":true,"request_id":"x"}"#).is_err());
        assert!(RpcResponse::decode(br#"{"ok":true,"request_id":"x","payload":{},"error":{"code":"TIMEOUT","message":""}}"#).is_err());
        assert!(RpcResponse::decode(br#"{"ok":false,"request_id":"x","payload":{}}"#).is_err());
        assert!(RpcResponse::decode(br#"{"ok":false,"request_id":"x","error":{"code":"NOPE","message":""}}"#).is_err());
    }

    #[test]
    fn request_rejects_unknown_kind() {
        assert!(RpcRequest::decode(br#"{"kind":"reboot","payload":{},"request_id":"r"}"#).is_err());
        assert!(RpcRequest::decode(br#"{"kind":"list_agents","payload":[],"request_id":"r"}"#).is_err());
    }
}
