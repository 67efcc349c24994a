use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{answer_extraction, Backend, BackendError, GenerationParams, GenerationResult, EXTRACTION_PROMPT};
use crate::message::Message;

/// Sleeps, then answers with a uniform random number in [0, 100]. Stands in
/// for a model whose cost is pure latency.
///
/// Only generation sleeps; the follow-up extraction call is answered at once.
pub struct DummyBackend {
    delay: Duration,
}

impl DummyBackend {
    pub const DEFAULT_DELAY: Duration = Duration::from_secs(1);

    pub fn new() -> Self {
        Self::with_delay(Self::DEFAULT_DELAY)
    }

    pub fn with_delay(delay: Duration) -> Self {
        Self { delay }
    }
}

impl Default for DummyBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for DummyBackend {
    fn generate(
        &self,
        system_prompt: &str,
        history: &[Message],
        params: &GenerationParams,
    ) -> Result<GenerationResult, BackendError> {
        if system_prompt == EXTRACTION_PROMPT {
            return Ok(answer_extraction(history));
        }
        thread::sleep(self.delay);
        let x: f64 = ChaCha8Rng::seed_from_u64(params.seed).gen_range(0.0..=100.0);
        Ok(GenerationResult::counted(x.to_string()))
    }
}
