//! The `player` agent kind.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::report::elicit_report;
use super::rule::GameRule;
use crate::actor::{Agent, AgentContext, AgentDef, AgentError, AgentRegistry};
use crate::backend::{Backend, BackendSpec, GenerationParams};
use crate::message::{Message, Role};

/// Metadata key marking a report request; its value is `"report"`.
pub const REQUEST_TYPE: &str = "type";
pub const REPORT: &str = "report";

/// Everything a player needs; the agent definition's params.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerParams {
    pub backend: BackendSpec,
    pub system_prompt: String,
    pub rule: GameRule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    1024
}

impl PlayerParams {
    pub fn into_def(self, name: impl Into<String>) -> AgentDef {
        AgentDef::new(name, "player", serde_json::to_value(self).expect("params serialize"))
    }
}

/// Seed for one agent's generation in one round, independent of scheduling.
pub fn derive_seed(global: u64, agent_id: &str, round: u64) -> u64 {
    // FNV-1a over the id, then a splitmix64 finalizer over the mix.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in agent_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = global ^ h.rotate_left(17) ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Request for a round's number.
pub fn report_request(round: u64) -> Message {
    Message::new("host", Role::User, format!("Report your number for round {round}."))
        .with_metadata(REQUEST_TYPE, REPORT)
        .with_metadata("round", round)
}

/// Keeps every non-request message as conversation history; answers report
/// requests through the two-call pipeline. The reply carries the value in
/// its content and in `value` metadata, plus `token_count`.
pub struct Player {
    params: PlayerParams,
    backend: Arc<dyn Backend>,
    history: Vec<Message>,
}

impl Player {
    pub fn new(params: PlayerParams) -> Result<Self, AgentError> {
        let backend = params.backend.build().map_err(|e| AgentError::InvalidParams(e.to_string()))?;
        Ok(Self { params, backend, history: Vec::new() })
    }
}

impl Agent for Player {
    fn reply(&mut self, inputs: Vec<Message>, ctx: &AgentContext) -> Result<Message, AgentError> {
        let mut round = None;
        for m in inputs {
            if m.meta(REQUEST_TYPE).and_then(|s| s.as_str()) == Some(REPORT) {
                round = Some(m.meta("round").and_then(|r| r.as_f64()).unwrap_or(0.0) as u64);
            } else {
                self.history.push(m);
            }
        }
        let Some(round) = round else {
            return Ok(Message::new(&ctx.name, Role::Assistant, "ok").with_metadata(REQUEST_TYPE, "ack"));
        };
        let gp = GenerationParams {
            temperature: self.params.temperature,
            seed: derive_seed(self.params.seed, &ctx.agent_id, round),
            max_tokens: self.params.max_tokens,
        };
        let r = elicit_report(self.backend.as_ref(), &self.params.system_prompt, &self.history, &gp, &self.params.rule)
            .map_err(|e| AgentError::Failed(e.to_string()))?;
        Ok(Message::new(&ctx.name, Role::Assistant, r.value.to_string())
            .with_metadata("value", r.value)
            .with_metadata("token_count", r.token_count)
            .with_metadata("round", round))
    }
}

pub(crate) fn register(reg: &AgentRegistry) {
    reg.register("player", |def: &AgentDef| {
        let params: PlayerParams = serde_json::from_value(def.params.clone())
            .map_err(|e| AgentError::InvalidParams(format!("player: {e}")))?;
        Ok(Box::new(Player::new(params)?))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_agent_and_round() {
        let a = derive_seed(1, "agent-0001", 1);
        assert_eq!(a, derive_seed(1, "agent-0001", 1));
        assert_ne!(a, derive_seed(1, "agent-0002", 1));
        assert_ne!(a, derive_seed(1, "agent-0001", 2));
        assert_ne!(a, derive_seed(2, "agent-0001", 1));
    }
}
