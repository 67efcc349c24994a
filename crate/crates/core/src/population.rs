//! Population configuration: per-aspect categorical distributions, profile
//! sampling, and background generation through the meta prompt.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationParams};
use crate::message::{Message, Role};

pub const META_PROMPT_FIRST_LINE: &str =
    "You need to generate a person's background description based on the user-provided JSON format information.";

pub const META_PROMPT: &str = "You need to generate a person's background description based on the user-provided JSON format information.\n\
In addition to the information provided by the user, each background description must also include the person's name, age, gender, job, and a paragraph describing the character's personality.\n\
Please output the background description after \"## Background\" tag.";

pub const BACKGROUND_TAG: &str = "## Background";

const PROPORTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("cannot read population config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse population config: {0}")]
    ParseError(String),
    #[error("proportions of aspect `{aspect}` sum to {sum}, not 1")]
    InvalidProportions { aspect: String, sum: f64 },
    #[error("invalid population config: {0}")]
    Invalid(String),
    #[error("generated text has no \"## Background\" tag")]
    MissingBackgroundTag,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aspect {
    pub name: String,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub population: usize,
    pub distributions: Vec<Aspect>,
}

impl PopulationConfig {
    pub fn from_yaml(text: &str) -> Result<Self, PopulationError> {
        let cfg: PopulationConfig = serde_yaml::from_str(text).map_err(|e| PopulationError::ParseError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects bad configs; never renormalizes.
    pub fn validate(&self) -> Result<(), PopulationError> {
        if self.population == 0 {
            return Err(PopulationError::Invalid("population must be positive".into()));
        }
        let mut aspects = HashSet::new();
        for a in &self.distributions {
            if !aspects.insert(a.name.as_str()) {
                return Err(PopulationError::Invalid(format!("duplicate aspect `{}`", a.name)));
            }
            if a.categories.is_empty() {
                return Err(PopulationError::Invalid(format!("aspect `{}` has no categories", a.name)));
            }
            let mut names = HashSet::new();
            for c in &a.categories {
                if !names.insert(c.name.as_str()) {
                    return Err(PopulationError::Invalid(format!("duplicate category `{}` in `{}`", c.name, a.name)));
                }
                if !(c.proportion >= 0.0 && c.proportion <= 1.0) {
                    return Err(PopulationError::Invalid(format!(
                        "proportion of `{}` in `{}` is {}",
                        c.name, a.name, c.proportion
                    )));
                }
            }
            let sum: f64 = a.categories.iter().map(|c| c.proportion).sum();
            if (sum - 1.0).abs() > PROPORTION_TOLERANCE {
                return Err(PopulationError::InvalidProportions { aspect: a.name.clone(), sum });
            }
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PopulationConfig, PopulationError> {
    PopulationConfig::from_yaml(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub profile_id: String,
    pub aspects: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Each category drawn i.i.d. per agent.
    #[default]
    Independent,
    /// Headcounts fixed by largest remainder, then shuffled.
    ExactQuota,
}

/// Splits `total` into integer counts proportional to `weights` (which sum
/// to 1): floors first, then the leftover units go to the largest
/// fractional parts, earlier entries winning ties.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub fn sample_profiles(cfg: &PopulationConfig, seed: u64, mode: SamplingMode) -> Vec<AgentProfile> {
    let n = cfg.population;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len();
    let mut profiles: Vec<AgentProfile> = (0..n)
        .map(|i| AgentProfile { profile_id: format!("profile-{i:0width$}"), aspects: BTreeMap::new(), background: None })
        .collect();
    for aspect in &cfg.distributions {
        let weights: Vec<f64> = aspect.categories.iter().map(|c| c.proportion).collect();
        let picks: Vec<usize> = match mode {
            SamplingMode::Independent => {
                let dist = WeightedIndex::new(&weights).expect("validated proportions");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            SamplingMode::ExactQuota => {
                let mut picks: Vec<usize> = largest_remainder(n, &weights)
                    .into_iter()
                    .enumerate()
                    .flat_map(|(i, c)| std::iter::repeat_n(i, c))
                    .collect();
                picks.shuffle(&mut rng);
                picks
            }
        };
        for (p, i) in profiles.iter_mut().zip(picks) {
            p.aspects.insert(aspect.name.clone(), aspect.categories[i].name.clone());
        }
    }
    profiles
}

/// The meta prompt with the profile's aspects as JSON in its slot.
pub fn build_generation_instruction(profile: &AgentProfile) -> String {
    let json = serde_json::to_string(&profile.aspects).expect("string map serializes");
    format!("{META_PROMPT}\n\n{json}")
}

/// Text after the first "## Background" line.
pub fn extract_background(text: &str) -> Result<String, PopulationError> {
    let start = text.find(BACKGROUND_TAG).ok_or(PopulationError::MissingBackgroundTag)?;
    let after_tag = &text[start + BACKGROUND_TAG.len()..];
    let rest = match after_tag.find('\n') {
        Some(nl) => &after_tag[nl + 1..],
        None => "",
    };
    Ok(rest.trim().to_string())
}

pub fn generate_background(
    profile: &mut AgentProfile,
    backend: &dyn Backend,
    seed: u64,
    temperature: f64,
) -> Result<String, PopulationError> {
    let instruction = Message::new("population", Role::User, build_generation_instruction(profile));
    let params = GenerationParams { temperature, seed, max_tokens: 1024 };
    let out = backend.generate("", &[instruction], &params)?;
    let bg = extract_background(&out.text)?;
    profile.background = Some(bg.clone());
    Ok(bg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_sums_to_total() {
        assert_eq!(largest_remainder(10, &[0.2; 5]), vec![2; 5]);
        assert_eq!(largest_remainder(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
        assert_eq!(largest_remainder(7, &[0.5, 0.5]), vec![4, 3]);
        assert_eq!(largest_remainder(0, &[0.5, 0.5]), vec![0, 0]);
    }

    #[test]
    fn rejects_bad_sums_and_duplicates() {
        let bad = "population: 3\ndistributions:\n  - name: A\n    categories:\n      - {name: x, proportion: 0.5}\n      - {name: y, proportion: 0.6}\n";
        match PopulationConfig::from_yaml(bad) {
            Err(PopulationError::InvalidProportions { aspect, sum }) => {
                assert_eq!(aspect, "A");
                assert!((sum - 1.1).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let dup = "population: 3\ndistributions:\n  - name: A\n    categories:\n      - {name: x, proportion: 0.5}\n      - {name: x, proportion: 0.5}\n";
        assert!(matches!(PopulationConfig::from_yaml(dup), Err(PopulationError::Invalid(_))));
        assert!(matches!(PopulationConfig::from_yaml("population: [oops"), Err(PopulationError::ParseError(_))));
    }

    #[test]
    fn degenerate_distribution() {
        let cfg = PopulationConfig::from_yaml(
            "population: 20\ndistributions:\n  - name: Job\n    categories:\n      - {name: Chef, proportion: 1.0}\n",
        )
        .unwrap();
        for mode in [SamplingMode::Independent, SamplingMode::ExactQuota] {
            assert!(sample_profiles(&cfg, 1, mode).iter().all(|p| p.aspects["Job"] == "Chef"));
        }
    }

    #[test]
    fn instruction_embeds_json() {
        let mut p = AgentProfile { profile_id: "p".into(), aspects: BTreeMap::new(), background: None };
        assert!(build_generation_instruction(&p).ends_with("\n\n{}"));
        p.aspects.insert("Education Level".into(), "Ph.D.".into());
        let s = build_generation_instruction(&p);
        assert!(s.starts_with(META_PROMPT));
        assert!(s.contains(r#"{"Education Level":"Ph.D."}"#));
        assert!(s.contains("after \"## Background\" tag"));
    }

    #[test]
    fn background_extraction() {
        assert_eq!(extract_background("x\n## Background\nHello there.\n").unwrap(), "Hello there.");
        assert!(matches!(extract_background("no tag"), Err(PopulationError::MissingBackgroundTag)));
    }
}
