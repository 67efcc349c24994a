//! End-to-end simulation setup shared by `simrun` and the hub: validate a
//! request, build the players (locally or on agent servers), run the game.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::{self, AgentRef, ServerClient};
use crate::backend::{BackendSpec, RemoteConfig, StrategyBackend, StrategyConfig, StrategyKind};
use crate::environment::Environment;
use crate::game::{
    build_prompt, partition_groups, run_game, GameRule, GroupInfo, PlayerParams, PromptVariant, Ratio, RoundResult,
    StrategyMix, Topology,
};
use crate::population::{self, SamplingMode};

#[derive(Debug, Error)]
pub enum SimError {
    /// The request itself is invalid.
    #[error("configuration error: {0}")]
    Config(String),
    /// The request was valid but running it failed.
    #[error("runtime error: {0}")]
    Runtime(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Strategy,
    Dummy,
    Scripted,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "strategy" => Self::Strategy,
            "dummy" => Self::Dummy,
            "scripted" => Self::Scripted,
            "remote" => Self::Remote,
            _ => return Err(SimError::Config(format!("unknown backend `{s}`"))),
        })
    }
}

/// A simulation request in plain, serializable terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub agents: usize,
    pub rounds: usize,
    pub ratio: String,
    pub offset: f64,
    pub note: bool,
    pub prompt: String,
    pub backend: BackendKind,
    pub strategy_mix: Option<String>,
    pub groups: Option<usize>,
    pub population_config: Option<PathBuf>,
    pub servers: Vec<String>,
    pub seed: u64,
    pub temperature: f64,
    /// Responses for the scripted backend, replayed by every player.
    pub script: Vec<String>,
    pub remote: Option<RemoteConfig>,
    /// Dummy backend latency override.
    pub dummy_delay_ms: Option<u64>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            agents: 100,
            rounds: 5,
            ratio: "2/3".into(),
            offset: 0.0,
            note: false,
            prompt: "2".into(),
            backend: BackendKind::Strategy,
            strategy_mix: None,
            groups: None,
            population_config: None,
            servers: Vec::new(),
            seed: 0,
            temperature: 1.0,
            script: Vec::new(),
            remote: None,
            dummy_delay_ms: None,
        }
    }
}

/// A validated request.
#[derive(Debug, Clone)]
pub struct SimPlan {
    pub spec: SimSpec,
    pub rule: GameRule,
    pub variant: PromptVariant,
    pub topology: Topology,
    pub mix: StrategyMix,
}

impl SimSpec {
    pub fn plan(&self) -> Result<SimPlan, SimError> {
        let cfg = |e: &dyn std::fmt::Display| SimError::Config(e.to_string());
        if self.agents == 0 {
            return Err(SimError::Config("at least one agent is required".into()));
        }
        if self.rounds == 0 {
            return Err(SimError::Config("at least one round is required".into()));
        }
        let ratio: Ratio = self.ratio.parse().map_err(|e| cfg(&e))?;
        let rule = GameRule::with_ratio(ratio).offset(self.offset).note(self.note);
        rule.validate().map_err(|e| cfg(&e))?;
        let variant: PromptVariant = self.prompt.parse().map_err(|e| cfg(&e))?;
        let topology = match (variant, self.groups) {
            (PromptVariant::Group, None) => Topology::Groups(3),
            (PromptVariant::Group, Some(k)) | (_, Some(k)) => {
                if k == 0 || k > self.agents {
                    return Err(SimError::Config(format!("cannot split {} agents into {k} groups", self.agents)));
                }
                Topology::Groups(k)
            }
            (_, None) => Topology::Individual,
        };
        if variant == PromptVariant::P5 && self.population_config.is_none() {
            return Err(SimError::Config("prompt 5 needs a population config for backgrounds".into()));
        }
        let mix = match &self.strategy_mix {
            Some(s) => s.parse().map_err(|e| cfg(&e))?,
            None => StrategyMix::default(),
        };
        if self.backend == BackendKind::Remote && self.remote.is_none() {
            return Err(SimError::Config("the remote backend needs an endpoint".into()));
        }
        if self.backend == BackendKind::Scripted && self.script.is_empty() {
            return Err(SimError::Config("the scripted backend needs a script".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(SimError::Config("temperature must be >= 0".into()));
        }
        Ok(SimPlan { spec: self.clone(), rule, variant, topology, mix })
    }
}

/// Id of the i-th agent out of n, zero-padded so ids sort numerically.
pub fn agent_id(i: usize, n: usize) -> String {
    let width = (n.saturating_sub(1)).to_string().len().max(4);
    format!("agent-{i:0width$}")
}

impl SimPlan {
    fn backend_for(&self, strategy: &StrategyConfig) -> BackendSpec {
        let s = &self.spec;
        match s.backend {
            BackendKind::Strategy => BackendSpec::Strategy { strategy: strategy.clone(), rule: self.rule.clone() },
            BackendKind::Dummy => BackendSpec::Dummy { delay_ms: s.dummy_delay_ms },
            BackendKind::Scripted => BackendSpec::Scripted { script: s.script.clone() },
            BackendKind::Remote => BackendSpec::Remote(s.remote.clone().expect("checked in plan")),
        }
    }

    /// Character backgrounds for prompt 5, one per agent.
    fn backgrounds(&self) -> Result<Option<Vec<String>>, SimError> {
        let s = &self.spec;
        let Some(path) = (self.variant == PromptVariant::P5).then_some(s.population_config.as_ref()).flatten() else {
            return Ok(None);
        };
        let mut cfg = population::load_config(path).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.population = s.agents;
        let mut profiles = population::sample_profiles(&cfg, s.seed, SamplingMode::Independent);
        let writer: Arc<dyn crate::backend::Backend> = match s.backend {
            BackendKind::Remote | BackendKind::Scripted => {
                self.backend_for(&StrategyConfig::level_k(1)).build().map_err(|e| SimError::Config(e.to_string()))?
            }
            _ => Arc::new(StrategyBackend::new(StrategyConfig::new(StrategyKind::Uniform), self.rule.clone())),
        };
        let mut out = Vec::with_capacity(profiles.len());
        for (i, p) in profiles.iter_mut().enumerate() {
            let seed = crate::game::derive_seed(s.seed, &p.profile_id, i as u64);
            let bg = population::generate_background(p, writer.as_ref(), seed, s.temperature)
                .map_err(|e| SimError::Runtime(e.to_string()))?;
            out.push(bg);
        }
        Ok(Some(out))
    }

    /// Player definitions, in agent order.
    pub fn player_params(&self) -> Result<Vec<(String, PlayerParams)>, SimError> {
        let n = self.spec.agents;
        let strategies = self.mix.assign(n, self.spec.seed);
        let backgrounds = self.backgrounds()?;
        let groups = match self.topology {
            Topology::Groups(k) => Some((k, partition_groups(n, k))),
            Topology::Individual => None,
        };
        (0..n)
            .map(|i| {
                let group = groups.as_ref().map(|(k, m)| GroupInfo { count: *k, id: m[i] + 1 });
                let variant = if group.is_some() { PromptVariant::Group } else { self.variant };
                let bg = backgrounds.as_ref().map(|b| b[i].as_str());
                let prompt =
                    build_prompt(variant, &self.rule, bg, group).map_err(|e| SimError::Config(e.to_string()))?;
                let params = PlayerParams {
                    backend: self.backend_for(&strategies[i]),
                    system_prompt: prompt,
                    rule: self.rule.clone(),
                    seed: self.spec.seed,
                    temperature: self.spec.temperature,
                    max_tokens: 1024,
                };
                Ok((agent_id(i, n), params))
            })
            .collect()
    }

    /// Creates the players: round-robin over the servers when any are
    /// given, otherwise in this process.
    pub fn spawn_players(&self) -> Result<Vec<AgentRef>, SimError> {
        let servers = &self.spec.servers;
        self.player_params()?
            .into_iter()
            .enumerate()
            .map(|(i, (id, params))| {
                let def = params.into_def(id.clone()).with_id(id);
                let r = if servers.is_empty() {
                    actor::spawn_local(def)
                } else {
                    actor::create_remote(&servers[i % servers.len()], &def)
                };
                r.map_err(|e| SimError::Runtime(format!("cannot create player {i}: {e}")))
            })
            .collect()
    }
}

/// Runs the simulation, calling `on_round` after every round.
pub fn run_simulation(spec: &SimSpec, on_round: impl FnMut(&RoundResult)) -> Result<Vec<RoundResult>, SimError> {
    let plan = spec.plan()?;
    let agents = plan.spawn_players()?;
    let env = Environment::new("game");
    let out = run_game(&agents, &plan.rule, spec.rounds, plan.topology, &env, on_round)
        .map_err(|e| SimError::Runtime(e.to_string()));
    for a in agents.iter().filter(|a| a.is_proxy()) {
        if let Some(addr) = a.server_addr() {
            let _ = ServerClient::new(addr).stop_agent(a.agent_id());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_validation() {
        assert!(SimSpec::default().plan().is_ok());
        let bad = |f: fn(&mut SimSpec)| {
            let mut s = SimSpec::default();
            f(&mut s);
            matches!(s.plan(), Err(SimError::Config(_)))
        };
        assert!(bad(|s| s.ratio = "3/2".into()));
        assert!(bad(|s| s.agents = 0));
        assert!(bad(|s| s.prompt = "6".into()));
        assert!(bad(|s| s.prompt = "5".into()));
        assert!(bad(|s| s.groups = Some(0)));
        assert!(bad(|s| s.strategy_mix = Some("level_k:1=0.3".into())));
        assert!(bad(|s| s.backend = BackendKind::Remote));
    }

    #[test]
    fn group_prompt_defaults_to_three_groups() {
        let s = SimSpec { prompt: "group".into(), agents: 6, ..Default::default() };
        let plan = s.plan().unwrap();
        assert_eq!(plan.topology, Topology::Groups(3));
        let params = plan.player_params().unwrap();
        assert!(params[0].1.system_prompt.contains("You are in group 1."));
        assert!(params[5].1.system_prompt.contains("You are in group 3."));
    }

    #[test]
    fn ids_are_padded() {
        assert_eq!(agent_id(7, 10), "agent-0007");
        assert_eq!(agent_id(7, 100_000), "agent-00007");
    }
}
