use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("ratio `{0}` is not of the form P/Q")]
    BadRatio(String),
    #[error("ratio {0} must lie strictly between 0 and 1")]
    RatioOutOfRange(String),
    #[error("offset must be finite and non-negative, got {0}")]
    BadOffset(f64),
    #[error("bounds must satisfy lower < upper, got [{0}, {1}]")]
    BadBounds(f64, f64),
    #[error("winner band must be positive, got {0}")]
    BadBand(f64),
}

/// Exact fraction `num/den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const TWO_THIRDS: Ratio = Ratio { num: 2, den: 3 };
    pub const ONE_HALF: Ratio = Ratio { num: 1, den: 2 };

    pub fn new(num: u32, den: u32) -> Result<Self, RuleError> {
        let r = Ratio { num, den };
        if den == 0 || num == 0 || num >= den {
            return Err(RuleError::RatioOutOfRange(r.to_string()));
        }
        Ok(r)
    }

    /// `x · num / den`, multiplying before dividing.
    pub fn apply(self, x: f64) -> f64 {
        x * f64::from(self.num) / f64::from(self.den)
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, d) = s.trim().split_once('/').ok_or_else(|| RuleError::BadRatio(s.to_string()))?;
        let num = n.trim().parse().map_err(|_| RuleError::BadRatio(s.to_string()))?;
        let den = d.trim().parse().map_err(|_| RuleError::BadRatio(s.to_string()))?;
        Ratio::new(num, den)
    }
}

/// Winning rule: target = offset + ratio × mean of the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRule {
    pub ratio: Ratio,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "default_lower")]
    pub lower: f64,
    #[serde(default = "default_upper")]
    pub upper: f64,
    #[serde(default = "default_band")]
    pub winner_band: f64,
    #[serde(default)]
    pub variation_note: bool,
}

fn default_lower() -> f64 {
    0.0
}
fn default_upper() -> f64 {
    100.0
}
fn default_band() -> f64 {
    0.5
}

impl Default for GameRule {
    fn default() -> Self {
        Self::classic()
    }
}

impl GameRule {
    /// Guess 2/3 of the average.
    pub fn classic() -> Self {
        Self::with_ratio(Ratio::TWO_THIRDS)
    }

    pub fn with_ratio(ratio: Ratio) -> Self {
        Self { ratio, offset: 0.0, lower: 0.0, upper: 100.0, winner_band: 0.5, variation_note: false }
    }

    pub fn offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn note(mut self, on: bool) -> Self {
        self.variation_note = on;
        self
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        Ratio::new(self.ratio.num, self.ratio.den)?;
        if !self.offset.is_finite() || self.offset < 0.0 {
            return Err(RuleError::BadOffset(self.offset));
        }
        if !(self.lower < self.upper) {
            return Err(RuleError::BadBounds(self.lower, self.upper));
        }
        if !(self.winner_band > 0.0) {
            return Err(RuleError::BadBand(self.winner_band));
        }
        Ok(())
    }

    /// One best-response step: `offset + ratio · x`.
    pub fn step(&self, x: f64) -> f64 {
        self.offset + self.ratio.apply(x)
    }

    /// The fixed point f* = offset / (1 − ratio).
    pub fn fixed_point(&self) -> f64 {
        let (p, q) = (f64::from(self.ratio.num), f64::from(self.ratio.den));
        self.offset * q / (q - p)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }

    pub fn in_range(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Wording of the rule inside prompts: "2/3", or "5 plus 1/2".
    pub fn phrase(&self) -> String {
        if self.offset == 0.0 {
            self.ratio.to_string()
        } else {
            format!("{} plus {}", self.offset, self.ratio)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ratios() {
        assert_eq!("2/3".parse::<Ratio>().unwrap(), Ratio::TWO_THIRDS);
        assert_eq!(" 51/100 ".parse::<Ratio>().unwrap(), Ratio { num: 51, den: 100 });
        assert!(matches!("3/2".parse::<Ratio>(), Err(RuleError::RatioOutOfRange(_))));
        assert!(matches!("1/0".parse::<Ratio>(), Err(RuleError::RatioOutOfRange(_))));
        assert!(matches!("0.5".parse::<Ratio>(), Err(RuleError::BadRatio(_))));
    }

    #[test]
    fn fixed_points() {
        assert_eq!(GameRule::classic().fixed_point(), 0.0);
        assert_eq!(GameRule::with_ratio(Ratio::ONE_HALF).offset(5.0).fixed_point(), 10.0);
    }

    #[test]
    fn phrases() {
        assert_eq!(GameRule::classic().phrase(), "2/3");
        assert_eq!(GameRule::with_ratio(Ratio::ONE_HALF).offset(5.0).phrase(), "5 plus 1/2");
        assert_eq!(GameRule::with_ratio(Ratio::ONE_HALF).offset(2.5).phrase(), "2.5 plus 1/2");
    }

    #[test]
    fn validation() {
        assert!(GameRule::classic().validate().is_ok());
        assert!(GameRule::classic().offset(-1.0).validate().is_err());
        let mut r = GameRule::classic();
        r.winner_band = 0.0;
        assert!(r.validate().is_err());
    }
}
