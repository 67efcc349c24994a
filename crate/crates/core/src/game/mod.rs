//! The guess-a-fraction-of-the-average game: rules, prompts, the two-call
//! report pipeline, round evaluation, the multi-round loop and exports.

mod engine;
mod export;
mod mix;
mod player;
mod prompt;
mod report;
mod rule;
mod stats;

pub use engine::{partition_groups, run_game, GameError, RoundResult, Topology, ANNOUNCE_FN};
pub use export::{export_results, histogram, ExportError, HIST_BINS};
pub use mix::{MixError, StrategyMix};
pub use player::{derive_seed, report_request, Player, PlayerParams, REPORT, REQUEST_TYPE};
pub use prompt::{announcement, build_prompt, group_announcement, GroupInfo, PromptError, PromptVariant, VARIATION_NOTE};
pub use report::{elicit_report, Report, ReportError};
pub use rule::{GameRule, Ratio, RuleError};
pub use stats::{compute_target, determine_winners, mean, summarize, Stats, StatsError, Winners};

pub(crate) fn register_kinds(reg: &crate::actor::AgentRegistry) {
    player::register(reg);
}
