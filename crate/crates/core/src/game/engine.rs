//! Multi-round game loop.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::player::report_request;
use super::prompt::{announcement, group_announcement};
use super::rule::{GameRule, RuleError};
use super::stats::{compute_target, determine_winners, mean, summarize, Stats};
use crate::actor::{self, ActorError, AgentRef, DEFAULT_RESOLVE_TIMEOUT};
use crate::environment::{EnvError, Environment, Listener, Predicate};
use crate::message::{Message, Payload};

/// Name of the environment function that publishes a round's outcome.
pub const ANNOUNCE_FN: &str = "announce";

/// Upper bound on threads driving local agents concurrently.
const MAX_LOCAL_THREADS: usize = 64;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("a game needs at least one agent")]
    NoAgents,
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("cannot split {agents} agents into {groups} groups")]
    BadGroups { agents: usize, groups: usize },
    #[error("every agent failed to report in round {0}")]
    NoReports(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Individual,
    Groups(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round_index: usize,
    pub reports: BTreeMap<String, f64>,
    /// Announced winner number: offset + ratio × mean (of group means in
    /// group play).
    pub target: f64,
    pub exact_winners: Vec<String>,
    pub band_winners: Vec<String>,
    pub stats: Stats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_averages: Option<BTreeMap<String, f64>>,
    pub token_counts: BTreeMap<String, u64>,
    /// Agents whose report failed and was left out.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed: Vec<String>,
}

/// Group index (0-based) of each agent: contiguous blocks whose sizes
/// differ by at most one.
pub fn partition_groups(n: usize, k: usize) -> Vec<usize> {
    let (base, extra) = (n / k, n % k);
    (0..k).flat_map(|g| std::iter::repeat_n(g, base + usize::from(g < extra))).collect()
}

/// Runs `rounds` rounds. Every round's reports are elicited concurrently;
/// afterwards the winner number is written into the environment, whose
/// listeners carry the announcement to the players before the next round.
/// In group play each group gets a child environment of `env`, so
/// announcements and other traffic stay inside the group.
pub fn run_game(
    agents: &[AgentRef],
    rule: &GameRule,
    rounds: usize,
    topology: Topology,
    env: &Arc<Environment>,
    mut on_round: impl FnMut(&RoundResult),
) -> Result<Vec<RoundResult>, GameError> {
    if agents.is_empty() {
        return Err(GameError::NoAgents);
    }
    rule.validate()?;
    let groups = match topology {
        Topology::Individual => None,
        Topology::Groups(k) if k >= 1 && k <= agents.len() => Some(k),
        Topology::Groups(k) => return Err(GameError::BadGroups { agents: agents.len(), groups: k }),
    };

    let membership = groups.map(|k| partition_groups(agents.len(), k));
    let channels: Vec<Arc<Environment>> = match (&membership, groups) {
        (Some(m), Some(k)) => {
            let envs: Vec<_> = (0..k).map(|g| Environment::new(format!("{}/group-{}", env.name(), g + 1))).collect();
            for e in &envs {
                env.add_env(e.clone())?;
            }
            for (a, &g) in agents.iter().zip(m) {
                envs[g].attach_agent(a.clone());
            }
            envs
        }
        _ => {
            for a in agents {
                env.attach_agent(a.clone());
            }
            vec![env.clone()]
        }
    };
    for (i, ch) in channels.iter().enumerate() {
        install_announcer(ch)?;
        let members: Vec<AgentRef> = match &membership {
            Some(m) => agents.iter().zip(m).filter(|(_, &g)| g == i).map(|(a, _)| a.clone()).collect(),
            None => agents.to_vec(),
        };
        ch.add_listener(Listener { fn_name: ANNOUNCE_FN.into(), predicate: Predicate::Always, targets: members })?;
    }

    let mut results = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let outcomes = elicit_all(agents, round as u64);
        let mut reports = Vec::new();
        let mut tokens = BTreeMap::new();
        let mut failed = Vec::new();
        for (idx, out) in outcomes.into_iter().enumerate() {
            let id = agents[idx].agent_id().to_string();
            match out {
                Ok((value, t)) => {
                    tokens.insert(id.clone(), t);
                    reports.push((idx, value));
                }
                Err(e) => {
                    tracing::warn!(agent = %id, round, error = %e, "report failed; excluded from the round");
                    failed.push(id);
                }
            }
        }
        if reports.is_empty() {
            return Err(GameError::NoReports(round));
        }
        let values: Vec<f64> = reports.iter().map(|(_, v)| *v).collect();
        let stats = summarize(&values).expect("non-empty");
        let id_of = |i: usize| agents[i].agent_id().to_string();

        let result = match (&membership, groups) {
            (Some(m), Some(k)) => {
                let mut per_group: Vec<Vec<f64>> = vec![Vec::new(); k];
                for &(i, v) in &reports {
                    per_group[m[i]].push(v);
                }
                let means: Vec<(usize, f64)> =
                    per_group.iter().enumerate().filter_map(|(g, vs)| mean(vs).ok().map(|x| (g, x))).collect();
                let group_values: Vec<f64> = means.iter().map(|(_, x)| *x).collect();
                let target = compute_target(rule, &group_values).expect("some group reported");
                let w = determine_winners(&means, target, rule.winner_band);
                let members_of = |gs: &[usize]| -> Vec<String> {
                    (0..agents.len()).filter(|i| gs.contains(&m[*i])).map(id_of).collect()
                };
                let numbers: Vec<f64> = (0..k)
                    .map(|g| means.iter().find(|(gg, _)| *gg == g).map_or(f64::NAN, |(_, x)| *x))
                    .collect();
                env.set("winner", json!(target));
                env.set("group_numbers", json!(group_values));
                let text = group_announcement(rule, target, &numbers);
                for ch in &channels {
                    ch.invoke(ANNOUNCE_FN, json!({ "winner": target, "text": text }))?;
                }
                RoundResult {
                    round_index: round,
                    reports: reports.iter().map(|&(i, v)| (id_of(i), v)).collect(),
                    target,
                    exact_winners: members_of(&w.exact),
                    band_winners: members_of(&w.band),
                    stats,
                    group_averages: Some(means.iter().map(|(g, x)| ((g + 1).to_string(), *x)).collect()),
                    token_counts: tokens,
                    failed,
                }
            }
            _ => {
                let target = compute_target(rule, &values).expect("non-empty");
                let w = determine_winners(&reports, target, rule.winner_band);
                env.invoke(ANNOUNCE_FN, json!({ "winner": target, "text": announcement(target) }))?;
                RoundResult {
                    round_index: round,
                    reports: reports.iter().map(|&(i, v)| (id_of(i), v)).collect(),
                    target,
                    exact_winners: w.exact.into_iter().map(id_of).collect(),
                    band_winners: w.band.into_iter().map(id_of).collect(),
                    stats,
                    group_averages: None,
                    token_counts: tokens,
                    failed,
                }
            }
        };
        tracing::info!(round, avg = result.stats.avg, target = result.target, "round complete");
        on_round(&result);
        results.push(result);
    }
    Ok(results)
}

/// Registers `announce(winner, text)`: stores the winner and the text and
/// returns the text, which becomes the listeners' notification.
fn install_announcer(env: &Environment) -> Result<(), EnvError> {
    let r = env.register_fn(ANNOUNCE_FN, |state, args| {
        let text = args.get("text").and_then(Value::as_str).ok_or("announce needs `text`")?.to_string();
        state.set("winner", args.get("winner").cloned().unwrap_or(Value::Null));
        state.set("announcement", Value::String(text.clone()));
        Ok(Value::String(text))
    });
    match r {
        Err(EnvError::DuplicateFunction(_)) | Ok(()) => Ok(()),
        Err(e) => Err(e),
    }
}

type Outcome = Result<(f64, u64), String>;

fn parse_report(msg: &Message) -> Outcome {
    let value = msg
        .meta("value")
        .and_then(|v| v.as_f64())
        .or_else(|| msg.content().trim().parse().ok())
        .ok_or_else(|| format!("reply carries no number: {:?}", msg.content()))?;
    let tokens = msg.meta("token_count").and_then(|v| v.as_f64()).unwrap_or(0.0) as u64;
    Ok((value, tokens))
}

/// Sends the round's request to every agent. Proxies are all called first so
/// their servers work in parallel; local agents run on a bounded set of
/// threads meanwhile; placeholders are resolved last.
fn elicit_all(agents: &[AgentRef], round: u64) -> Vec<Outcome> {
    let mut out: Vec<Option<Outcome>> = vec![None; agents.len()];
    let mut pending = Vec::new();
    let mut local = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        if a.is_proxy() {
            match actor::call(a, report_request(round)) {
                Ok(p) => pending.push((i, p)),
                Err(e) => out[i] = Some(Err(e.to_string())),
            }
        } else {
            local.push(i);
        }
    }

    if !local.is_empty() {
        let next = Mutex::new(local.into_iter());
        let results = Mutex::new(Vec::new());
        let threads = MAX_LOCAL_THREADS.min(agents.len());
        thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let Some(i) = next.lock().unwrap().next() else { break };
                    let r = actor::call(&agents[i], report_request(round))
                        .map_err(|e| e.to_string())
                        .and_then(|p| p.as_message().map(parse_report).unwrap_or_else(|| Err("no reply".into())));
                    results.lock().unwrap().push((i, r));
                });
            }
        });
        for (i, r) in results.into_inner().unwrap() {
            out[i] = Some(r);
        }
    }

    for (i, p) in pending {
        let r = resolve(&p).and_then(|m| parse_report(&m).map_err(|e| ActorError::Agent(crate::actor::AgentError::Failed(e))));
        out[i] = Some(r.map_err(|e| e.to_string()));
    }
    out.into_iter().map(|o| o.expect("every agent handled")).collect()
}

fn resolve(p: &Payload) -> Result<Message, ActorError> {
    actor::resolve_payload(p, DEFAULT_RESOLVE_TIMEOUT)
}
