use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rule::GameRule;
use crate::backend::{extract_last_number, Backend, BackendError, GenerationParams, EXTRACTION_PROMPT};
use crate::message::{Message, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no number found in response: {0:?}")]
    UnparseableReport(String),
    #[error("reported number {0} is outside the allowed range")]
    OutOfRangeReport(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub value: f64,
    /// Full first response.
    pub raw_text: String,
    /// Tokens of the first response.
    pub token_count: u64,
}

/// Two backend calls: the first produces the full response, the second is
/// asked for the number alone. If the second answer does not parse (or the
/// call fails), the last number in the first response is used.
pub fn elicit_report(
    backend: &dyn Backend,
    system_prompt: &str,
    history: &[Message],
    params: &GenerationParams,
    rule: &GameRule,
) -> Result<Report, ReportError> {
    let first = backend.generate(system_prompt, history, params)?;
    let source = [Message::new("player", Role::User, first.text.clone())];
    let extracted = match backend.generate(EXTRACTION_PROMPT, &source, params) {
        Ok(r) => r.text.trim().trim_matches('*').trim().parse::<f64>().ok(),
        Err(e) => {
            tracing::debug!(error = %e, "extraction call failed; falling back to the first response");
            None
        }
    };
    let value = extracted
        .filter(|x| x.is_finite())
        .or_else(|| extract_last_number(&first.text))
        .ok_or_else(|| ReportError::UnparseableReport(first.text.clone()))?;
    if !rule.in_range(value) {
        return Err(ReportError::OutOfRangeReport(value));
    }
    Ok(Report { value, raw_text: first.text, token_count: first.token_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{GenerationResult, ScriptedBackend, StrategyBackend, StrategyConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<B> {
        inner: B,
        calls: AtomicUsize,
    }

    impl<B: Backend> Backend for Counting<B> {
        fn generate(&self, s: &str, h: &[Message], p: &GenerationParams) -> Result<GenerationResult, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.generate(s, h, p)
        }
    }

    #[test]
    fn level_one_takes_two_calls() {
        let rule = GameRule::classic();
        let b = Counting { inner: StrategyBackend::new(StrategyConfig::level_k(1), rule.clone()), calls: AtomicUsize::new(0) };
        let r = elicit_report(&b, "sys", &[], &GenerationParams::default(), &rule).unwrap();
        assert!((r.value - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(b.calls.load(Ordering::SeqCst), 2);
        assert!(r.token_count > 0);
    }

    #[test]
    fn falls_back_to_last_number() {
        let rule = GameRule::classic();
        let b = ScriptedBackend::new(["Thinking... My reported number is **33**.", "I am not sure."]);
        let r = elicit_report(&b, "sys", &[], &GenerationParams::default(), &rule).unwrap();
        assert_eq!(r.value, 33.0);
        let b = ScriptedBackend::new(["My reported number is **33**."]);
        assert_eq!(elicit_report(&b, "sys", &[], &GenerationParams::default(), &rule).unwrap().value, 33.0);
    }

    #[test]
    fn unparseable_and_out_of_range() {
        let rule = GameRule::classic();
        let b = ScriptedBackend::new(["no digits at all", "none here either"]);
        assert!(matches!(
            elicit_report(&b, "sys", &[], &GenerationParams::default(), &rule),
            Err(ReportError::UnparseableReport(_))
        ));
        let b = ScriptedBackend::new(["I say 150", "150"]);
        assert_eq!(
            elicit_report(&b, "sys", &[], &GenerationParams::default(), &rule),
            Err(ReportError::OutOfRangeReport(150.0))
        );
    }
}
