//! In-memory hub state: registered servers and simulation progress.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::ServerMode;
use crate::game::Stats;

pub const ALIVE_WITHIN: Duration = Duration::from_secs(10);
pub const STALE_WITHIN: Duration = Duration::from_secs(30);
pub const METRIC_HISTORY: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HubError {
    #[error("a live server is already registered at {0}")]
    DuplicateAddress(String),
    #[error("unknown server {0}")]
    UnknownServer(String),
    #[error("server {0} is dead")]
    ServerDead(String),
    #[error("unknown simulation {0}")]
    UnknownSimulation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Alive,
    Stale,
    Dead,
}

impl Health {
    pub fn from_age(age: Duration) -> Self {
        if age < ALIVE_WITHIN {
            Health::Alive
        } else if age < STALE_WITHIN {
            Health::Stale
        } else {
            Health::Dead
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cpu_percent: f64,
    pub mem_bytes: u64,
    pub uptime_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub at_ms: i64,
    pub agent_count: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerRecord {
    pub server_id: String,
    pub addr: String,
    pub mode: ServerMode,
    pub capacity: usize,
    pub agent_count: usize,
    pub status: Health,
    pub metrics: Metrics,
    /// Milliseconds since the Unix epoch.
    pub last_heartbeat: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round_index: usize,
    pub target: f64,
    pub stats: Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimState {
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub sim_id: String,
    pub state: SimState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub rounds: Vec<RoundSummary>,
}

struct Entry {
    record: ServerRecord,
    history: VecDeque<MetricPoint>,
}

#[derive(Default)]
struct Inner {
    servers: BTreeMap<String, Entry>,
    sims: BTreeMap<String, SimulationRecord>,
}

pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn wall_clock_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

/// Server and simulation registry. Health is derived from heartbeat age at
/// read time, against an injectable clock.
#[derive(Clone)]
pub struct Registry {
    inner: Arc<RwLock<Inner>>,
    clock: Clock,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(wall_clock_ms))
    }

    pub fn with_clock(clock: Clock) -> Self {
        Self { inner: Arc::new(RwLock::new(Inner::default())), clock }
    }

    fn now(&self) -> i64 {
        (self.clock)()
    }

    fn health(&self, now: i64, last: i64) -> Health {
        Health::from_age(Duration::from_millis(now.saturating_sub(last).max(0) as u64))
    }

    /// Registers a server. A stale or dead record at the same address is
    /// replaced; a live one is a conflict.
    pub fn register(&self, addr: &str, mode: ServerMode, capacity: usize) -> Result<String, HubError> {
        let now = self.now();
        let mut inner = self.inner.write().unwrap();
        let existing: Vec<(String, Health)> = inner
            .servers
            .iter()
            .filter(|(_, e)| e.record.addr == addr)
            .map(|(id, e)| (id.clone(), self.health(now, e.record.last_heartbeat)))
            .collect();
        if existing.iter().any(|(_, h)| *h == Health::Alive) {
            return Err(HubError::DuplicateAddress(addr.to_string()));
        }
        for (id, _) in existing {
            inner.servers.remove(&id);
        }
        let server_id = format!("srv-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]);
        let record = ServerRecord {
            server_id: server_id.clone(),
            addr: addr.to_string(),
            mode,
            capacity,
            agent_count: 0,
            status: Health::Alive,
            metrics: Metrics::default(),
            last_heartbeat: now,
        };
        inner.servers.insert(server_id.clone(), Entry { record, history: VecDeque::new() });
        Ok(server_id)
    }

    pub fn heartbeat(&self, server_id: &str, agent_count: usize, metrics: Metrics) -> Result<(), HubError> {
        let now = self.now();
        let mut inner = self.inner.write().unwrap();
        let e = inner.servers.get_mut(server_id).ok_or_else(|| HubError::UnknownServer(server_id.to_string()))?;
        e.record.agent_count = agent_count;
        e.record.metrics = metrics;
        e.record.last_heartbeat = now;
        if e.history.len() == METRIC_HISTORY {
            e.history.pop_front();
        }
        e.history.push_back(MetricPoint { at_ms: now, agent_count, metrics });
        Ok(())
    }

    pub fn deregister(&self, server_id: &str) -> Result<(), HubError> {
        self.inner
            .write()
            .unwrap()
            .servers
            .remove(server_id)
            .map(|_| ())
            .ok_or_else(|| HubError::UnknownServer(server_id.to_string()))
    }

    /// Consistent snapshot of every server, ordered by id.
    pub fn servers(&self) -> Vec<ServerRecord> {
        let now = self.now();
        let inner = self.inner.read().unwrap();
        inner
            .servers
            .values()
            .map(|e| {
                let mut r = e.record.clone();
                r.status = self.health(now, r.last_heartbeat);
                r
            })
            .collect()
    }

    pub fn server(&self, server_id: &str) -> Result<ServerRecord, HubError> {
        let now = self.now();
        let inner = self.inner.read().unwrap();
        let e = inner.servers.get(server_id).ok_or_else(|| HubError::UnknownServer(server_id.to_string()))?;
        let mut r = e.record.clone();
        r.status = self.health(now, r.last_heartbeat);
        Ok(r)
    }

    /// The server's record if it is not dead.
    pub fn usable_server(&self, server_id: &str) -> Result<ServerRecord, HubError> {
        let r = self.server(server_id)?;
        if r.status == Health::Dead {
            return Err(HubError::ServerDead(server_id.to_string()));
        }
        Ok(r)
    }

    pub fn metric_history(&self, server_id: &str) -> Result<Vec<MetricPoint>, HubError> {
        let inner = self.inner.read().unwrap();
        let e = inner.servers.get(server_id).ok_or_else(|| HubError::UnknownServer(server_id.to_string()))?;
        Ok(e.history.iter().cloned().collect())
    }

    pub fn start_simulation(&self, sim_id: &str) {
        self.inner.write().unwrap().sims.entry(sim_id.to_string()).or_insert_with(|| SimulationRecord {
            sim_id: sim_id.to_string(),
            state: SimState::Running,
            error: None,
            rounds: Vec::new(),
        });
    }

    /// Records a round; the simulation is created on first sight. A round
    /// posted again replaces the earlier copy.
    pub fn push_round(&self, sim_id: &str, round: RoundSummary) {
        self.start_simulation(sim_id);
        let mut inner = self.inner.write().unwrap();
        let sim = inner.sims.get_mut(sim_id).expect("just inserted");
        sim.rounds.retain(|r| r.round_index != round.round_index);
        sim.rounds.push(round);
        sim.rounds.sort_by_key(|r| r.round_index);
    }

    pub fn finish_simulation(&self, sim_id: &str, error: Option<String>) {
        self.start_simulation(sim_id);
        let mut inner = self.inner.write().unwrap();
        let sim = inner.sims.get_mut(sim_id).expect("just inserted");
        sim.state = if error.is_some() { SimState::Failed } else { SimState::Finished };
        sim.error = error;
    }

    pub fn simulation(&self, sim_id: &str) -> Result<SimulationRecord, HubError> {
        self.inner
            .read()
            .unwrap()
            .sims
            .get(sim_id)
            .cloned()
            .ok_or_else(|| HubError::UnknownSimulation(sim_id.to_string()))
    }

    pub fn simulations(&self) -> Vec<SimulationRecord> {
        self.inner.read().unwrap().sims.values().cloned().collect()
    }
}
