//! Strategy mixes: `kind[:param]=weight,...`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backend::{StrategyConfig, StrategyKind};
use crate::population::largest_remainder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixError {
    #[error("bad mix entry `{0}`: expected kind[:param]=weight")]
    Syntax(String),
    #[error("unknown strategy `{0}`")]
    UnknownKind(String),
    #[error("bad parameter in `{0}`")]
    BadParam(String),
    #[error("weights sum to {0}, not 1")]
    WeightSum(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyMix {
    pub entries: Vec<(StrategyConfig, f64)>,
}

impl Default for StrategyMix {
    /// Level 1–4 at 15% each, 20% ratio-of-winner, 20% slightly-below-winner.
    fn default() -> Self {
        "level_k:1=0.15,level_k:2=0.15,level_k:3=0.15,level_k:4=0.15,ratio_of_winner=0.2,below_winner=0.2"
            .parse()
            .expect("default mix parses")
    }
}

impl StrategyMix {
    pub fn single(cfg: StrategyConfig) -> Self {
        Self { entries: vec![(cfg, 1.0)] }
    }

    /// One strategy per agent: exact headcounts by largest remainder,
    /// shuffled with `seed`.
    pub fn assign(&self, n: usize, seed: u64) -> Vec<StrategyConfig> {
        let weights: Vec<f64> = self.entries.iter().map(|(_, w)| *w).collect();
        let mut out: Vec<StrategyConfig> = largest_remainder(n, &weights)
            .into_iter()
            .zip(&self.entries)
            .flat_map(|(c, (cfg, _))| std::iter::repeat_n(cfg.clone(), c))
            .collect();
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        out
    }
}

fn parse_entry(entry: &str) -> Result<(StrategyConfig, f64), MixError> {
    let (lhs, w) = entry.split_once('=').ok_or_else(|| MixError::Syntax(entry.to_string()))?;
    let weight: f64 = w.trim().parse().map_err(|_| MixError::Syntax(entry.to_string()))?;
    if !(weight >= 0.0) {
        return Err(MixError::Syntax(entry.to_string()));
    }
    let (kind, param) = match lhs.split_once(':') {
        Some((k, p)) => (k.trim(), Some(p.trim())),
        None => (lhs.trim(), None),
    };
    let kind: StrategyKind = kind.parse().map_err(|_| MixError::UnknownKind(kind.to_string()))?;
    let bad = || MixError::BadParam(entry.to_string());
    let num = |p: &str| p.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
    let cfg = match (kind, param) {
        (StrategyKind::LevelK, Some(p)) => StrategyConfig::level_k(p.parse().map_err(|_| bad())?),
        (StrategyKind::LevelK, None) => return Err(bad()),
        (StrategyKind::BelowWinner, Some(p)) => StrategyConfig::below_winner(num(p)?),
        (StrategyKind::AnchoredNoise, Some(p)) => StrategyConfig { sigma: Some(num(p)?), ..StrategyConfig::new(kind) },
        (StrategyKind::Uniform | StrategyKind::FixedZero, Some(_)) => return Err(bad()),
        (_, Some(p)) => StrategyConfig { anchor: Some(num(p)?), ..StrategyConfig::new(kind) },
        (_, None) => StrategyConfig::new(kind),
    };
    cfg.validate().map_err(|_| bad())?;
    Ok((cfg, weight))
}

impl FromStr for StrategyMix {
    type Err = MixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let entries = s.split(',').filter(|e| !e.trim().is_empty()).map(parse_entry).collect::<Result<Vec<_>, _>>()?;
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if entries.is_empty() || (sum - 1.0).abs() > 1e-6 {
            return Err(MixError::WeightSum(sum));
        }
        Ok(Self { entries })
    }
}

impl fmt::Display for StrategyMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(c, w)| {
                let param = match c.kind {
                    StrategyKind::LevelK => c.k.map(|k| k.to_string()),
                    StrategyKind::BelowWinner => c.delta.map(|d| d.to_string()),
                    StrategyKind::AnchoredNoise => c.sigma.map(|s| s.to_string()),
                    _ => c.anchor.map(|a| a.to_string()),
                };
                match param {
                    Some(p) => format!("{}:{p}={w}", c.kind),
                    None => format!("{}={w}", c.kind),
                }
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}
