//! Agent kinds every server knows about.

use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::agent::{Agent, AgentContext, AgentDef, AgentError, AgentRegistry};
use crate::message::{Message, Role};

/// Replies with its inputs' contents joined by newlines.
pub struct Echo;

impl Agent for Echo {
    fn reply(&mut self, inputs: Vec<Message>, ctx: &AgentContext) -> Result<Message, AgentError> {
        Ok(Message::new(&ctx.name, Role::Assistant, joined(&inputs)))
    }
}

/// Echo after a fixed delay; stands in for slow generation.
pub struct Sleeper {
    delay: Duration,
}

impl Agent for Sleeper {
    fn reply(&mut self, inputs: Vec<Message>, ctx: &AgentContext) -> Result<Message, AgentError> {
        thread::sleep(self.delay);
        Ok(Message::new(&ctx.name, Role::Assistant, joined(&inputs)))
    }
}

/// Keeps every message it receives. A message with metadata `op = "dump"`
/// is answered with a JSON array of everything recorded so far.
#[derive(Default)]
pub struct Recorder {
    seen: Vec<Message>,
}

impl Agent for Recorder {
    fn reply(&mut self, inputs: Vec<Message>, ctx: &AgentContext) -> Result<Message, AgentError> {
        let mut dump = false;
        for m in inputs {
            if m.meta("op").and_then(|s| s.as_str()) == Some("dump") {
                dump = true;
            } else {
                self.seen.push(m);
            }
        }
        let content = if dump {
            serde_json::to_string(&self.seen).expect("messages serialize")
        } else {
            self.seen.len().to_string()
        };
        Ok(Message::new(&ctx.name, Role::Assistant, content))
    }
}

/// Deterministic function of its inputs: `salt:hash(contents)`.
pub struct PureFn {
    salt: String,
}

impl Agent for PureFn {
    fn reply(&mut self, inputs: Vec<Message>, ctx: &AgentContext) -> Result<Message, AgentError> {
        let mut h = Fnv64::default();
        for m in &inputs {
            h.write(m.content().as_bytes());
            h.write(&[0x1f]);
        }
        Ok(Message::new(&ctx.name, Role::Assistant, format!("{}:{:016x}", self.salt, h.0)))
    }
}

struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

fn joined(inputs: &[Message]) -> String {
    inputs.iter().map(Message::content).collect::<Vec<_>>().join("\n")
}

fn param_u64(def: &AgentDef, key: &str, default: u64) -> Result<u64, AgentError> {
    match def.params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_u64().ok_or_else(|| AgentError::InvalidParams(format!("`{key}` must be a non-negative integer"))),
    }
}

pub(crate) fn register_builtins(reg: &AgentRegistry) {
    reg.register("echo", |_| Ok(Box::new(Echo)));
    reg.register("sleep", |def| Ok(Box::new(Sleeper { delay: Duration::from_millis(param_u64(def, "ms", 1000)?) })));
    reg.register("recorder", |_| Ok(Box::<Recorder>::default()));
    reg.register("pure", |def| {
        let salt = def.params.get("salt").and_then(Value::as_str).unwrap_or(&def.name).to_string();
        Ok(Box::new(PureFn { salt }))
    });
    crate::environment::register_kinds(reg);
    crate::game::register_kinds(reg);
}
