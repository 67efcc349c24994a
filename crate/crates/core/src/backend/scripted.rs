use std::collections::VecDeque;
use std::sync::Mutex;

use super::{Backend, BackendError, GenerationParams, GenerationResult};
use crate::message::Message;

/// Replays a fixed list of responses, one per call, then fails.
pub struct ScriptedBackend {
    script: Mutex<VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new(script: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { script: Mutex::new(script.into_iter().map(Into::into).collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn generate(&self, _: &str, _: &[Message], _: &GenerationParams) -> Result<GenerationResult, BackendError> {
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .map(GenerationResult::counted)
            .ok_or_else(|| BackendError::Failed("script exhausted".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_then_fails() {
        let b = ScriptedBackend::new(["only entry"]);
        let p = GenerationParams::default();
        let r = b.generate("", &[], &p).unwrap();
        assert_eq!(r.text, "only entry");
        assert_eq!(r.token_count, 2);
        assert!(matches!(b.generate("", &[], &p), Err(BackendError::Failed(_))));
    }
}
