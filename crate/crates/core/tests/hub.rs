mod common;

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use agentsim::actor::{call, AgentDef, AgentServer, ServerConfig, ServerMode};
use agentsim::manager::{HubClient, HubHandle, Health, Metrics, Registry, RoundSummary, SimState};
use agentsim::message::{Message, Role};
use agentsim::sim::SimSpec;
use serde_json::{json, Value};

fn wait_until(limit: Duration, mut f: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < limit {
        if f() {
            return true;
        }
        thread::sleep(Duration::from_millis(20));
    }
    f()
}

/// A registry whose clock the test moves by hand.
fn manual_clock() -> (Registry, Arc<AtomicI64>) {
    let now = Arc::new(AtomicI64::new(1_000_000));
    let n = now.clone();
    (Registry::with_clock(Arc::new(move || n.load(Ordering::SeqCst))), now)
}

#[test]
fn server_registers_and_agents_are_managed_through_the_hub() {
    let hub = HubHandle::spawn("127.0.0.1:0", Registry::new()).unwrap();
    let mut cfg = ServerConfig::new("127.0.0.1:0", ServerMode::ManyToOne).workers(4).capacity(2);
    cfg.hub_url = Some(hub.url());
    cfg.heartbeat_interval = Duration::from_millis(100);
    let server = AgentServer::bind(cfg).unwrap().spawn();
    let client = HubClient::new(hub.url());

    assert!(wait_until(Duration::from_secs(5), || client.servers().unwrap().len() == 1));
    let record = client.servers().unwrap().remove(0);
    assert_eq!(record.addr, server.addr());
    assert_eq!(record.status, Health::Alive);
    assert_eq!(record.capacity, 2);
    let sid = record.server_id;

    let a = client.create_agent(&sid, &AgentDef::new("echo-a", "echo", Value::Null)).unwrap();
    let b = client.create_agent(&sid, &AgentDef::new("echo-b", "echo", Value::Null)).unwrap();
    let err = client.create_agent(&sid, &AgentDef::new("echo-c", "echo", Value::Null)).unwrap_err();
    assert_eq!(err.code(), Some("CAPACITY_EXCEEDED"));

    let listed = client.agents(&sid).unwrap();
    let mut ids: Vec<_> = listed.iter().map(|i| i.agent_id.clone()).collect();
    ids.sort();
    let mut want = vec![a.clone(), b.clone()];
    want.sort();
    assert_eq!(ids, want);
    assert!(listed.iter().all(|i| i.kind == "echo"));

    // The heartbeat carries the live agent count.
    assert!(wait_until(Duration::from_secs(5), || client.servers().unwrap()[0].agent_count == 2));
    let history = client.get_json(&format!("/api/servers/{sid}/metrics")).unwrap();
    assert!(!history["data"].as_array().unwrap().is_empty());

    // The created agent is reachable directly over RPC.
    let (host, port) = server.addr().rsplit_once(':').unwrap();
    let proxy = agentsim::actor::AgentRef::proxy(a.clone(), "echo-a", host, port.parse().unwrap());
    let reply = agentsim::actor::resolve_payload(
        &call(&proxy, Message::new("t", Role::User, "ping")).unwrap(),
        Duration::from_secs(5),
    )
    .unwrap();
    assert_eq!(reply.content(), "ping");

    client.stop_agent(&sid, &a).unwrap();
    assert_eq!(client.stop_agent(&sid, &a).unwrap_err().code(), Some("AGENT_NOT_FOUND"));
    assert!(call(&proxy, Message::new("t", Role::User, "ping")).is_err());
    assert_eq!(client.agents(&sid).unwrap().len(), 1);
    drop(server);
}

#[test]
fn duplicate_live_address_is_rejected() {
    let (reg, now) = manual_clock();
    let hub = HubHandle::spawn("127.0.0.1:0", reg).unwrap();
    let client = HubClient::new(hub.url());
    let first = client.register("10.0.0.1:7000", ServerMode::ManyToOne, 8).unwrap();
    let err = client.register("10.0.0.1:7000", ServerMode::ManyToOne, 8).unwrap_err();
    assert_eq!(err.code(), Some("DUPLICATE_ADDRESS"));
    // Once the old record is dead the address may be claimed again.
    now.fetch_add(31_000, Ordering::SeqCst);
    let second = client.register("10.0.0.1:7000", ServerMode::ManyToOne, 8).unwrap();
    assert_ne!(first, second);
    assert_eq!(client.servers().unwrap().len(), 1);
}

#[test]
fn status_follows_heartbeat_age() {
    let (reg, now) = manual_clock();
    let hub = HubHandle::spawn("127.0.0.1:0", reg).unwrap();
    let client = HubClient::new(hub.url());
    let sid = client.register("10.0.0.2:7000", ServerMode::ManyToOne, 8).unwrap();
    let status = || client.servers().unwrap()[0].status;
    assert_eq!(status(), Health::Alive);
    now.fetch_add(9_999, Ordering::SeqCst);
    assert_eq!(status(), Health::Alive);
    now.fetch_add(1, Ordering::SeqCst);
    assert_eq!(status(), Health::Stale);
    now.fetch_add(20_000, Ordering::SeqCst);
    assert_eq!(status(), Health::Dead);

    // Agent operations refuse a dead server.
    let err = client.create_agent(&sid, &AgentDef::new("x", "echo", Value::Null)).unwrap_err();
    assert_eq!(err.code(), Some("SERVER_DEAD"));

    client.heartbeat(&sid, 3, Metrics { cpu_percent: 1.5, mem_bytes: 10, uptime_s: 40 }).unwrap();
    let rec = client.servers().unwrap().remove(0);
    assert_eq!(rec.status, Health::Alive);
    assert_eq!(rec.agent_count, 3);
    assert_eq!(rec.metrics.uptime_s, 40);
}

#[test]
fn errors_use_the_envelope() {
    let hub = HubHandle::spawn("127.0.0.1:0", Registry::new()).unwrap();
    let client = HubClient::new(hub.url());
    let err = client.agents("srv-missing").unwrap_err();
    assert_eq!(err.code(), Some("UNKNOWN_SERVER"));
    assert_eq!(client.heartbeat("srv-missing", 0, Metrics::default()).unwrap_err().code(), Some("UNKNOWN_SERVER"));
    assert_eq!(client.rounds("sim-missing").unwrap_err().code(), Some("UNKNOWN_SIMULATION"));

    let http = reqwest::blocking::Client::new();
    let resp = http
        .post(format!("{}/api/register", hub.url()))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let body: Value = resp.json().unwrap();
    assert_eq!(body["ok"], json!(false));
    assert_eq!(body["error"]["code"], json!("BAD_REQUEST"));
    assert!(body["error"]["message"].is_string());

    let resp = http.get(format!("{}/api/servers/nope/agents", hub.url())).send().unwrap();
    assert_eq!(resp.status().as_u16(), 404);

    let ok: Value = http.get(format!("{}/api/servers", hub.url())).send().unwrap().json().unwrap();
    assert_eq!(ok, json!({"ok": true, "data": []}));
}

#[test]
fn simulation_started_through_the_hub_reports_rounds() {
    let hub = HubHandle::spawn("127.0.0.1:0", Registry::new()).unwrap();
    let client = HubClient::new(hub.url());
    let spec = SimSpec { agents: 20, rounds: 3, seed: 5, ..SimSpec::default() };
    let sim_id = client.start_simulation(&spec).unwrap();
    assert!(wait_until(Duration::from_secs(30), || {
        hub.registry().simulation(&sim_id).map(|s| s.state != SimState::Running).unwrap_or(false)
    }));
    let record = hub.registry().simulation(&sim_id).unwrap();
    assert_eq!(record.state, SimState::Finished, "{:?}", record.error);
    let rounds = client.rounds(&sim_id).unwrap();
    assert_eq!(rounds.iter().map(|r| r.round_index).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(rounds.iter().all(|r| (0.0..=100.0).contains(&r.stats.avg)));

    let bad = SimSpec { ratio: "3/0".into(), ..SimSpec::default() };
    assert_eq!(client.start_simulation(&bad).unwrap_err().code(), Some("BAD_REQUEST"));

    // Externally driven simulations post their own rounds.
    let listed = client.get_json("/api/simulations").unwrap();
    assert_eq!(listed["data"].as_array().unwrap().len(), 1);
    let round = RoundSummary { round_index: 4, target: 1.0, stats: rounds[0].stats.clone() };
    client.post_round(&sim_id, &round).unwrap();
    assert_eq!(client.rounds(&sim_id).unwrap().len(), 4);
}

#[test]
fn server_reregisters_after_hub_restart() {
    let interval = Duration::from_millis(300);
    let hub = HubHandle::spawn("127.0.0.1:0", Registry::new()).unwrap();
    let listen = hub.addr().to_string();
    let mut cfg = ServerConfig::new("127.0.0.1:0", ServerMode::ManyToOne).workers(2);
    cfg.hub_url = Some(hub.url());
    cfg.heartbeat_interval = interval;
    let server = AgentServer::bind(cfg).unwrap().spawn();
    assert!(wait_until(Duration::from_secs(5), || hub.registry().servers().len() == 1));
    hub.stop();

    let restarted = HubHandle::spawn(&listen, Registry::new()).unwrap();
    let start = Instant::now();
    assert!(wait_until(Duration::from_secs(5), || restarted.registry().servers().len() == 1));
    // One failed heartbeat, then a registration on the next tick.
    assert!(start.elapsed() <= interval * 2 + Duration::from_millis(300), "{:?}", start.elapsed());
    assert_eq!(restarted.registry().servers()[0].addr, server.addr());
}
