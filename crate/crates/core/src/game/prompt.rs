//! System prompts and round announcements for the game.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::rule::GameRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("this prompt needs a character background")]
    MissingBackground,
    #[error("the group prompt needs the group count and id")]
    MissingGroupInfo,
    #[error("unknown prompt variant `{0}`")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptVariant {
    /// Report directly.
    P1,
    /// Think step by step.
    P2,
    /// Step by step, players are rational.
    P3,
    /// P3 plus "guess the others' strategies".
    P4,
    /// Role play with a character background.
    P5,
    /// Step by step; meant for rules with an offset.
    P7,
    /// Group-level game.
    Group,
}

impl FromStr for PromptVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().trim_start_matches('p') {
            "1" => Self::P1,
            "2" => Self::P2,
            "3" => Self::P3,
            "4" => Self::P4,
            "5" => Self::P5,
            "7" => Self::P7,
            "group" | "g" => Self::Group,
            _ => return Err(PromptError::UnknownVariant(s.to_string())),
        })
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::P1 => "1",
            Self::P2 => "2",
            Self::P3 => "3",
            Self::P4 => "4",
            Self::P5 => "5",
            Self::P7 => "7",
            Self::Group => "group",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupInfo {
    pub count: usize,
    /// 1-based.
    pub id: usize,
}

const OPENING: &str = "You are playing a multiplayer game.";
const RANGE_RULE: &str = "Each player reports a real number between 0 and 100, inclusive.";
const DIRECT: &str = "Directly report your number without additional information.";
const STEP_BY_STEP: &str = "Think step by step and then report your number.";
const RATIONAL: &str = "1. All players are rational.";
const GUESS_OTHERS: &str = "2. All players will try to guess the others' strategies to adjust their own strategies.";

pub const VARIATION_NOTE: &str = "This game is a variation of the famous \"guess the 2/3 of the average\" game.";

fn winner_rule(rule: &GameRule) -> String {
    format!(
        "The winner will be the player whose number is the closest to {} of the average of all reported numbers.",
        rule.phrase()
    )
}

pub fn build_prompt(
    variant: PromptVariant,
    rule: &GameRule,
    background: Option<&str>,
    group: Option<GroupInfo>,
) -> Result<String, PromptError> {
    let rules = format!("# Game Rule\n1. {RANGE_RULE}\n2. {}", winner_rule(rule));
    let mut text = match variant {
        PromptVariant::P1 => format!("{OPENING}\n\n{rules}\n\n{DIRECT}"),
        PromptVariant::P2 | PromptVariant::P7 => format!("{OPENING}\n\n{rules}\n\n{STEP_BY_STEP}"),
        PromptVariant::P3 => format!("{OPENING}\n\n{rules}\n\n# Note:\n{RATIONAL}\n\n{STEP_BY_STEP}"),
        PromptVariant::P4 => {
            format!("{OPENING}\n\n{rules}\n\n# Note:\n{RATIONAL}\n{GUESS_OTHERS}\n\n{STEP_BY_STEP}")
        }
        PromptVariant::P5 => {
            let bg = background.ok_or(PromptError::MissingBackground)?;
            format!(
                "You are playing a role in a multiplayer game, make sure your behavior fits the following character background.\n\n\
                 # Character Background\n\n{bg}\n\n{rules}\n\n\
                 # Note\n1. Please strictly follow your character background in the game.\n\n{STEP_BY_STEP}"
            )
        }
        PromptVariant::Group => {
            let g = group.ok_or(PromptError::MissingGroupInfo)?;
            format!(
                "{OPENING}\n\n# Game Rule\n\
                 1. There are {} groups of players in the game.\n\
                 2. {RANGE_RULE}\n\
                 3. Each group reports the average of all players in the group.\n\
                 4. The winner will be the group whose number is the closest to {} of the average of all groups' numbers.\n\
                 5. You are in group {}.\n\n{STEP_BY_STEP}",
                g.count,
                rule.phrase(),
                g.id
            )
        }
    };
    if rule.variation_note {
        text.push_str("\n\n");
        text.push_str(VARIATION_NOTE);
    }
    Ok(text)
}

/// Announcement after an individual-level round.
/// Numbers are written in their shortest exact form, so a player reading the
/// text recovers the winner bit for bit.
pub fn announcement(winner: f64) -> String {
    format!("The winner number of this round is {winner}. Let's move on to the next round.")
}

/// Announcement after a group-level round; `group_numbers` in group order.
pub fn group_announcement(rule: &GameRule, winner: f64, group_numbers: &[f64]) -> String {
    let groups: Vec<String> =
        group_numbers.iter().enumerate().map(|(i, v)| format!("Group {}: {v}", i + 1)).collect();
    format!(
        "The {} of the average for this round is {winner}. The numbers reported by groups are {}. Let's move on to the next round.",
        rule.phrase(),
        groups.join(", ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::rule::Ratio;

    #[test]
    fn rule_phrases_are_substituted() {
        let p1 = build_prompt(PromptVariant::P1, &GameRule::classic(), None, None).unwrap();
        assert!(p1.contains("closest to 2/3 of the average"));
        let p7 = build_prompt(PromptVariant::P7, &GameRule::with_ratio(Ratio::ONE_HALF).offset(5.0), None, None)
            .unwrap();
        assert!(p7.contains("5 plus 1/2 of the average"));
        let noted = GameRule::with_ratio(Ratio { num: 51, den: 100 }).note(true);
        let p = build_prompt(PromptVariant::P1, &noted, None, None).unwrap();
        assert!(p.contains("51/100 of the average"));
        assert!(p.ends_with(VARIATION_NOTE));
    }

    #[test]
    fn missing_inputs() {
        let r = GameRule::classic();
        assert_eq!(build_prompt(PromptVariant::P5, &r, None, None), Err(PromptError::MissingBackground));
        assert_eq!(build_prompt(PromptVariant::Group, &r, None, None), Err(PromptError::MissingGroupInfo));
    }

    #[test]
    fn variants_parse() {
        assert_eq!("group".parse::<PromptVariant>().unwrap(), PromptVariant::Group);
        assert_eq!("7".parse::<PromptVariant>().unwrap(), PromptVariant::P7);
        assert_eq!("P3".parse::<PromptVariant>().unwrap(), PromptVariant::P3);
        assert!("6".parse::<PromptVariant>().is_err());
    }

    #[test]
    fn announcements() {
        assert_eq!(announcement(12.77), "The winner number of this round is 12.77. Let's move on to the next round.");
        let w = 2.0 / 3.0 * 22.0;
        let text = announcement(w);
        assert_eq!(text, "The winner number of this round is 14.666666666666666. Let's move on to the next round.");
        let number = text.strip_prefix("The winner number of this round is ").unwrap().split(". ").next().unwrap();
        assert_eq!(number.parse::<f64>().unwrap(), w);
        assert_eq!(
            group_announcement(&GameRule::classic(), 20.0, &[10.0, 30.5, 50.0]),
            "The 2/3 of the average for this round is 20. The numbers reported by groups are \
             Group 1: 10, Group 2: 30.5, Group 3: 50. Let's move on to the next round."
        );
    }
}
