//! Deterministic textbook players.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{answer_extraction, Backend, BackendError, GenerationParams, GenerationResult, EXTRACTION_PROMPT};
use crate::game::GameRule;
use crate::message::Message;
use crate::population::META_PROMPT_FIRST_LINE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Uniform,
    LevelK,
    FixedZero,
    BelowWinner,
    RatioOfWinner,
    FixedPointIterate,
    AnchoredNoise,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        Self::Uniform,
        Self::LevelK,
        Self::FixedZero,
        Self::BelowWinner,
        Self::RatioOfWinner,
        Self::FixedPointIterate,
        Self::AnchoredNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::LevelK => "level_k",
            Self::FixedZero => "fixed_zero",
            Self::BelowWinner => "below_winner",
            Self::RatioOfWinner => "ratio_of_winner",
            Self::FixedPointIterate => "fixed_point_iterate",
            Self::AnchoredNoise => "anchored_noise",
        }
    }

    /// Whether the strategy reasons from the last announced winner.
    pub fn needs_winner(self) -> bool {
        matches!(self, Self::BelowWinner | Self::RatioOfWinner | Self::FixedPointIterate)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| BackendError::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

pub const DEFAULT_ANCHOR: f64 = 50.0;
pub const DEFAULT_DELTA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Reasoning depth for `level_k` (and the centre of `anchored_noise`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    /// Undercut for `below_winner`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Level-0 guess.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<f64>,
    /// Noise for `anchored_noise`; 8 × temperature when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Fail with `MissingWinner` instead of falling back to level 1 when a
    /// winner-based strategy has no winner to work from.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub strict_winner: bool,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, k: None, delta: None, anchor: None, sigma: None, strict_winner: false }
    }

    pub fn level_k(k: u32) -> Self {
        Self { k: Some(k), ..Self::new(StrategyKind::LevelK) }
    }

    pub fn below_winner(delta: f64) -> Self {
        Self { delta: Some(delta), ..Self::new(StrategyKind::BelowWinner) }
    }

    pub fn anchored_noise(k: u32, sigma: f64) -> Self {
        Self { k: Some(k), sigma: Some(sigma), ..Self::new(StrategyKind::AnchoredNoise) }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidConfig(format!("{}: {m}", self.kind)));
        match self.kind {
            StrategyKind::LevelK if self.k.is_none() => return bad("k is required"),
            StrategyKind::BelowWinner if self.delta.is_some_and(|d| !(d > 0.0)) => return bad("delta must be > 0"),
            StrategyKind::AnchoredNoise if self.sigma.is_some_and(|s| !(s >= 0.0)) => return bad("sigma must be >= 0"),
            _ => {}
        }
        if self.anchor.is_some_and(|a| !a.is_finite()) {
            return bad("anchor must be finite");
        }
        Ok(())
    }

    fn anchor(&self) -> f64 {
        self.anchor.unwrap_or(DEFAULT_ANCHOR)
    }
}

fn iterate(rule: &GameRule, from: f64, k: u32) -> f64 {
    (0..k).fold(from, |x, _| rule.step(x))
}

/// Picks a report. Level-k players reason from the latest announced winner
/// when there is one, otherwise from the anchor; winner-based strategies
/// without a winner fall back to level 1 unless `strict_winner` is set.
pub fn strategy_decide<R: Rng + ?Sized>(
    cfg: &StrategyConfig,
    rule: &GameRule,
    last_winner: Option<f64>,
    rng: &mut R,
) -> Result<f64, BackendError> {
    let base = last_winner.unwrap_or(cfg.anchor());
    let x = match (cfg.kind, last_winner) {
        (StrategyKind::Uniform, _) => rng.gen_range(rule.lower..=rule.upper),
        (StrategyKind::LevelK, _) => iterate(rule, base, cfg.k.unwrap_or(1)),
        (StrategyKind::FixedZero, _) => rule.fixed_point(),
        (kind @ (StrategyKind::BelowWinner | StrategyKind::RatioOfWinner | StrategyKind::FixedPointIterate), None) => {
            if cfg.strict_winner {
                return Err(BackendError::MissingWinner(kind.to_string()));
            }
            iterate(rule, cfg.anchor(), 1)
        }
        (StrategyKind::BelowWinner, Some(w)) => w - cfg.delta.unwrap_or(DEFAULT_DELTA),
        (StrategyKind::RatioOfWinner | StrategyKind::FixedPointIterate, Some(w)) => rule.step(w),
        (StrategyKind::AnchoredNoise, _) => {
            let centre = iterate(rule, base, cfg.k.unwrap_or(1));
            let sigma = cfg.sigma.unwrap_or(0.0);
            let noise = Normal::new(0.0, sigma)
                .map_err(|e| BackendError::InvalidConfig(format!("sigma {sigma}: {e}")))?
                .sample(rng);
            centre + noise
        }
    };
    Ok(rule.clamp(x))
}

static ANNOUNCED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"round is (-?\d+(?:\.\d+)?)").unwrap());

/// Most recent winner number found in announcement messages.
pub fn last_announced_winner(history: &[Message]) -> Option<f64> {
    history
        .iter()
        .rev()
        .find_map(|m| ANNOUNCED.captures_iter(m.content()).last().and_then(|c| c[1].parse().ok()))
}

/// Plays one [`StrategyConfig`] under one [`GameRule`], and writes templated
/// character backgrounds when given the background meta prompt.
pub struct StrategyBackend {
    cfg: StrategyConfig,
    rule: GameRule,
}

impl StrategyBackend {
    pub fn new(cfg: StrategyConfig, rule: GameRule) -> Self {
        Self { cfg, rule }
    }

    fn rationale(&self, last_winner: Option<f64>, x: f64) -> String {
        let phrase = self.rule.phrase();
        let reason = match (self.cfg.kind, last_winner) {
            (StrategyKind::Uniform, _) => "I have no reason to prefer any number, so I pick one at random.".to_string(),
            (StrategyKind::FixedZero, _) => {
                "If everyone is rational, the only stable choice is the equilibrium of the rule.".to_string()
            }
            (StrategyKind::BelowWinner, Some(w)) => {
                format!("The last winner number was {w}. I will go slightly below it.")
            }
            (StrategyKind::RatioOfWinner | StrategyKind::FixedPointIterate, Some(w)) => {
                format!("The last winner number was {w}. Taking {phrase} of it is my new guess.")
            }
            (_, w) => {
                let from = w.unwrap_or(self.cfg.anchor());
                let k = self.cfg.k.unwrap_or(1);
                format!("Starting from {from}, I apply {phrase} of the average {k} time(s).")
            }
        };
        format!("{reason} My reported number is {x}.")
    }
}

impl Backend for StrategyBackend {
    fn generate(
        &self,
        system_prompt: &str,
        history: &[Message],
        params: &GenerationParams,
    ) -> Result<GenerationResult, BackendError> {
        if system_prompt == EXTRACTION_PROMPT {
            return Ok(answer_extraction(history));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        if let Some(instruction) = history.last().filter(|m| m.content().starts_with(META_PROMPT_FIRST_LINE)) {
            return Ok(GenerationResult::counted(templated_background(instruction.content(), &mut rng)));
        }
        let mut cfg = self.cfg.clone();
        if cfg.kind == StrategyKind::AnchoredNoise && cfg.sigma.is_none() {
            cfg.sigma = Some(8.0 * params.temperature);
        }
        let last_winner = last_announced_winner(history);
        let x = strategy_decide(&cfg, &self.rule, last_winner, &mut rng)?;
        Ok(GenerationResult::counted(self.rationale(last_winner, x)))
    }
}

const FIRST_NAMES: &[&str] = &[
    "Thomas", "Maria", "Wei", "Aisha", "Lucas", "Sofia", "Kenji", "Amara", "Daniel", "Elena", "Omar", "Priya",
    "Henrik", "Chloe", "Mateo", "Yuki",
];
const LAST_NAMES: &[&str] = &[
    "Reed", "Garcia", "Chen", "Okafor", "Müller", "Rossi", "Tanaka", "Novak", "Silva", "Haddad", "Kowalski",
    "Larsen",
];
const JOBS: &[&str] = &[
    "software engineer", "teacher", "nurse", "accountant", "carpenter", "journalist", "chef", "architect",
    "pharmacist", "sales manager",
];
const TRAITS: &[&str] = &[
    "meticulous", "curious", "pragmatic", "competitive", "cautious", "imaginative", "analytical", "easygoing",
];

/// Background text for the meta prompt, built from word lists. The JSON
/// block after the prompt's last blank line supplies the given aspects.
fn templated_background(instruction: &str, rng: &mut ChaCha8Rng) -> String {
    let aspects: serde_json::Map<String, serde_json::Value> = instruction
        .rsplit("\n\n")
        .next()
        .and_then(|j| serde_json::from_str(j).ok())
        .unwrap_or_default();
    let name = format!("{} {}", FIRST_NAMES.choose(rng).unwrap(), LAST_NAMES.choose(rng).unwrap());
    let age: u32 = rng.gen_range(20..=70);
    let gender = aspects
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("gender"))
        .and_then(|(_, v)| v.as_str())
        .map(str::to_lowercase)
        .unwrap_or_else(|| ["male", "female"].choose(rng).unwrap().to_string());
    let job = JOBS.choose(rng).unwrap();
    let (t1, t2) = {
        let picks: Vec<_> = TRAITS.choose_multiple(rng, 2).collect();
        (picks[0], picks[1])
    };
    let details: Vec<String> = aspects
        .iter()
        .filter(|(k, _)| !k.eq_ignore_ascii_case("gender"))
        .map(|(k, v)| format!("{}: {}", k, v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
        .collect();
    let mut text = format!(
        "## Background\nName: {name}\nAge: {age}\nGender: {gender}\nJob: {job}\n"
    );
    for d in details {
        text.push_str(&d);
        text.push('\n');
    }
    text.push_str(&format!(
        "{name} is a {t1} and {t2} person who thinks carefully before acting and enjoys a good puzzle."
    ));
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Ratio;
    use crate::message::Role;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn level_k_values() {
        let rule = GameRule::classic();
        let x1 = strategy_decide(&StrategyConfig::level_k(1), &rule, None, &mut rng()).unwrap();
        assert!((x1 - 100.0 / 3.0).abs() < 1e-12);
        let x3 = strategy_decide(&StrategyConfig::level_k(3), &rule, None, &mut rng()).unwrap();
        assert!((x3 - 400.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn winner_based_values() {
        let rule = GameRule::classic();
        let r = strategy_decide(&StrategyConfig::new(StrategyKind::RatioOfWinner), &rule, Some(12.77), &mut rng());
        assert!((r.unwrap() - 8.513_333_333_333_333).abs() < 1e-12);
        let b = strategy_decide(&StrategyConfig::below_winner(0.01), &rule, Some(15.90), &mut rng()).unwrap();
        assert!((b - 15.89).abs() < 1e-12);
        let b0 = strategy_decide(&StrategyConfig::below_winner(1.0), &rule, Some(0.2), &mut rng()).unwrap();
        assert_eq!(b0, 0.0);
        let offset = GameRule::with_ratio(Ratio::ONE_HALF).offset(5.0);
        let f = strategy_decide(&StrategyConfig::new(StrategyKind::FixedPointIterate), &offset, Some(15.0), &mut rng());
        assert_eq!(f.unwrap(), 12.5);
        let z = strategy_decide(&StrategyConfig::new(StrategyKind::FixedZero), &offset, None, &mut rng());
        assert_eq!(z.unwrap(), 10.0);
    }

    #[test]
    fn missing_winner_falls_back_or_fails() {
        let rule = GameRule::classic();
        let lenient = strategy_decide(&StrategyConfig::new(StrategyKind::RatioOfWinner), &rule, None, &mut rng());
        assert!((lenient.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        let strict = StrategyConfig { strict_winner: true, ..StrategyConfig::new(StrategyKind::BelowWinner) };
        assert!(matches!(strategy_decide(&strict, &rule, None, &mut rng()), Err(BackendError::MissingWinner(_))));
    }

    #[test]
    fn level_k_requires_k() {
        assert!(StrategyConfig::new(StrategyKind::LevelK).validate().is_err());
        assert!(StrategyConfig::level_k(0).validate().is_ok());
    }

    #[test]
    fn reads_winner_from_announcements() {
        let h = vec![
            Message::new("env", Role::System, "The winner number of this round is 21.50. Let's move on to the next round."),
            Message::new("env", Role::System, "The winner number of this round is 12.77. Let's move on to the next round."),
        ];
        assert_eq!(last_announced_winner(&h), Some(12.77));
        assert_eq!(last_announced_winner(&[]), None);
    }

    #[test]
    fn same_seed_same_text() {
        let b = StrategyBackend::new(StrategyConfig::anchored_noise(1, 4.0), GameRule::classic());
        let p = GenerationParams { seed: 99, ..Default::default() };
        assert_eq!(b.generate("sys", &[], &p).unwrap(), b.generate("sys", &[], &p).unwrap());
    }
}
