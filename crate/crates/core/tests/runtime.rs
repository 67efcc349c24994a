mod common;

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use agentsim::actor::{
    call, call_many, create_remote, registry, resolve, resolve_payload, spawn_local, to_dist, ActorError, Agent,
    AgentContext, AgentDef, AgentError, ServerClient, ServerMode, DEFAULT_RESOLVE_TIMEOUT,
};
use agentsim::message::{Message, Payload, Role};
use agentsim::transport::{
    decode_frame, pool, rpc_call, write_frame, RpcClient, RpcError, RpcKind, RpcRequest, RpcResponse,
};
use serde_json::{json, Value};

const T: Duration = DEFAULT_RESOLVE_TIMEOUT;

fn user(text: &str) -> Message {
    Message::new("user", Role::User, text)
}

fn content(p: &Payload) -> String {
    resolve_payload(p, T).unwrap().content().to_string()
}

#[test]
fn local_echo_and_ids() {
    let a = spawn_local(AgentDef::new("echo", "echo", Value::Null)).unwrap();
    let b = spawn_local(AgentDef::new("echo", "echo", Value::Null)).unwrap();
    assert_ne!(a.agent_id(), b.agent_id());
    assert!(!a.is_proxy());
    let out = call(&a, user("x")).unwrap();
    assert_eq!(out.as_message().expect("local calls return messages").content(), "x");
    assert!(matches!(
        spawn_local(AgentDef::new("n", "no-such-kind", Value::Null)),
        Err(ActorError::UnknownAgentKind(_))
    ));
}

#[test]
fn to_dist_is_transparent() {
    let server = common::many_to_one(4, 16);
    let local = spawn_local(AgentDef::new("echo", "echo", Value::Null)).unwrap();
    let remote = to_dist(&local, server.addr()).unwrap();
    assert!(remote.is_proxy());
    assert_eq!(remote.agent_id(), local.agent_id());
    let l = call(&local, user("same")).unwrap();
    let r = call(&remote, user("same")).unwrap();
    assert!(r.is_placeholder());
    assert_eq!(content(&l), content(&r));
    assert!(matches!(to_dist(&remote, server.addr()), Err(ActorError::NotLocal(_))));
}

#[test]
fn full_server_rejects_creation() {
    let server = common::many_to_one(2, 1);
    create_remote(server.addr(), &AgentDef::new("a", "echo", Value::Null)).unwrap();
    let err = create_remote(server.addr(), &AgentDef::new("b", "echo", Value::Null)).unwrap_err();
    assert!(matches!(err, ActorError::CapacityExceeded(_)), "{err:?}");
}

/// The four-agent pipeline: two writers answer a prompt, a judge reads both,
/// a printer formats the verdict.
fn pipeline(agents: &[agentsim::actor::AgentRef; 4]) -> Vec<String> {
    let prompt = Payload::from(user("topic"));
    let a = call(&agents[0], prompt.clone()).unwrap();
    let b = call(&agents[1], prompt).unwrap();
    let judged = call_many(&agents[2], vec![a.clone(), b.clone()]).unwrap();
    let printed = call(&agents[3], judged.clone()).unwrap();
    [a, b, judged, printed].iter().map(content).collect()
}

#[test]
fn pipeline_matches_centralized_run() {
    let server = common::many_to_one(4, 16);
    let defs: Vec<AgentDef> = ["writer-a", "writer-b", "judge", "printer"]
        .iter()
        .map(|n| AgentDef::new(*n, "pure", Value::Null))
        .collect();
    let local: Vec<_> = defs.iter().map(|d| spawn_local(d.clone()).unwrap()).collect();
    let dist: Vec<_> = local.iter().map(|a| to_dist(a, server.addr()).unwrap()).collect();
    let centralized = pipeline(&local.try_into().unwrap());
    let distributed = pipeline(&dist.try_into().unwrap());
    assert_eq!(centralized, distributed);
}

#[test]
fn placeholders_chain_across_servers() {
    let s1 = common::many_to_one(2, 8);
    let s2 = common::many_to_one(2, 8);
    let a = spawn_local(AgentDef::new("a", "pure", Value::Null)).unwrap();
    let b_def = AgentDef::new("b", "pure", Value::Null);
    let c_def = AgentDef::new("c", "pure", Value::Null);
    let (b_l, c_l) = (spawn_local(b_def.clone()).unwrap(), spawn_local(c_def.clone()).unwrap());
    let b = create_remote(s1.addr(), &b_def).unwrap();
    let c = create_remote(s2.addr(), &c_def).unwrap();

    let expected = call(&c_l, call(&b_l, call(&a, user("seed")).unwrap()).unwrap()).unwrap();
    let pb = call(&b, call(&a, user("seed")).unwrap()).unwrap();
    assert!(pb.is_placeholder());
    // C receives B's unresolved placeholder and resolves it itself.
    let pc = call(&c, pb).unwrap();
    let got = resolve_payload(&pc, T).unwrap();
    assert!(got.same_payload(expected.as_message().unwrap()));
}

#[test]
fn second_resolve_uses_the_cache() {
    let server = common::many_to_one(2, 8);
    let agent = create_remote(server.addr(), &AgentDef::new("e", "echo", Value::Null)).unwrap();
    let Payload::Placeholder(p) = call(&agent, user("hello")).unwrap() else { panic!("expected placeholder") };
    let first = resolve(&p, T).unwrap();
    let before = pool().calls_to(server.addr());
    let second = resolve(&p, T).unwrap();
    assert_eq!(pool().calls_to(server.addr()), before);
    assert_eq!(first, second);
    assert_eq!(p.cached(), Some(&first));
}

#[test]
fn resolving_against_a_stopped_server_fails() {
    let server = common::many_to_one(2, 8);
    let agent = create_remote(server.addr(), &AgentDef::new("s", "sleep", json!({"ms": 2000}))).unwrap();
    let Payload::Placeholder(p) = call(&agent, user("x")).unwrap() else { panic!("expected placeholder") };
    server.stop();
    let err = resolve(&p, Duration::from_secs(2)).unwrap_err();
    assert!(
        matches!(err, ActorError::TaskNotFound(_) | ActorError::Rpc(_) | ActorError::Timeout(_)),
        "{err:?}"
    );
}

#[test]
fn parallel_sleepers_take_one_sleep() {
    let server = common::many_to_one(10, 16);
    let agents: Vec<_> = (0..10)
        .map(|i| create_remote(server.addr(), &AgentDef::new(format!("s{i}"), "sleep", json!({"ms": 1000}))).unwrap())
        .collect();
    let start = Instant::now();
    let ps: Vec<_> = agents.iter().map(|a| call(a, user("z")).unwrap()).collect();
    for p in &ps {
        resolve_payload(p, T).unwrap();
    }
    let took = start.elapsed();
    assert!(took < Duration::from_millis(1500), "10 parallel 1 s tasks took {took:?}");
}

#[test]
fn stopped_agent_is_gone_and_status_reports_config() {
    let server = common::many_to_one(3, 7);
    let client = ServerClient::new(server.addr());
    let agent = client.create_agent(&AgentDef::new("e", "echo", Value::Null)).unwrap();
    let status = client.status().unwrap();
    assert_eq!(status.mode, ServerMode::ManyToOne);
    assert_eq!((status.agent_count, status.capacity, status.workers), (1, 7, 3));
    assert_eq!(client.list_agents().unwrap()[0].agent_id, agent.agent_id());
    client.stop_agent(agent.agent_id()).unwrap();
    assert!(matches!(call(&agent, user("x")), Err(ActorError::AgentNotFound(_))));
    assert!(matches!(client.stop_agent(agent.agent_id()), Err(ActorError::AgentNotFound(_))));
    assert_eq!(client.status().unwrap().agent_count, 0);
}

/// Flags any overlap between two replies on the same instance.
struct Reentrancy {
    busy: Arc<AtomicBool>,
    violations: Arc<AtomicUsize>,
}

impl Agent for Reentrancy {
    fn reply(&mut self, inputs: Vec<Message>, ctx: &AgentContext) -> Result<Message, AgentError> {
        if self.busy.swap(true, Ordering::SeqCst) {
            self.violations.fetch_add(1, Ordering::SeqCst);
        }
        thread::sleep(Duration::from_millis(2));
        self.busy.store(false, Ordering::SeqCst);
        Ok(Message::new(&ctx.name, Role::Assistant, inputs[0].content()))
    }
}

#[test]
fn an_agent_never_runs_two_inputs_at_once() {
    let violations = Arc::new(AtomicUsize::new(0));
    let v = violations.clone();
    registry().register("reentrancy-probe", move |_| {
        Ok(Box::new(Reentrancy { busy: Arc::new(AtomicBool::new(false)), violations: v.clone() }))
    });
    let server = common::many_to_one(16, 8);
    let remote = create_remote(server.addr(), &AgentDef::new("r", "reentrancy-probe", Value::Null)).unwrap();
    let local = spawn_local(AgentDef::new("r", "reentrancy-probe", Value::Null)).unwrap();
    thread::scope(|s| {
        for i in 0..100 {
            let (remote, local) = (&remote, &local);
            s.spawn(move || {
                let text = format!("m{i}");
                assert_eq!(content(&call(remote, user(&text)).unwrap()), text);
                assert_eq!(content(&call(local, user(&text)).unwrap()), text);
            });
        }
    });
    assert_eq!(violations.load(Ordering::SeqCst), 0);
}

#[test]
fn concurrent_clients_never_see_each_others_responses() {
    let server = common::many_to_one(8, 128);
    let echo = create_remote(server.addr(), &AgentDef::new("e", "echo", Value::Null)).unwrap();
    let addr = server.addr().to_string();
    thread::scope(|s| {
        for c in 0..64 {
            let (addr, id) = (addr.clone(), echo.agent_id().to_string());
            s.spawn(move || {
                let client = RpcClient::connect(&addr).unwrap();
                for i in 0..20 {
                    let text = format!("client {c} call {i}");
                    let input = Payload::from(user(&text)).to_value();
                    let req = RpcRequest::new(RpcKind::CallAgent, json!({"agent_id": id, "inputs": [input]}));
                    let resp = client.call(&req, T).unwrap();
                    assert_eq!(resp.request_id, req.request_id);
                    let task = resp.result.unwrap()["task_id"].as_str().unwrap().to_string();
                    let req = RpcRequest::new(RpcKind::ResolveTask, json!({"task_id": task, "timeout_ms": 10_000}));
                    let resp = client.call(&req, T).unwrap();
                    assert_eq!(resp.request_id, req.request_id);
                    let msg = Payload::from_value(&resp.result.unwrap()["message"]).unwrap();
                    assert_eq!(msg.as_message().unwrap().content(), text);
                }
            });
        }
    });
}

#[test]
fn server_status_over_a_fresh_connection() {
    let server = common::many_to_one(2, 5);
    let req = RpcRequest::new(RpcKind::ServerStatus, Value::Null);
    let resp = rpc_call(server.addr(), &req, Duration::from_secs(5)).unwrap();
    assert!(resp.is_ok());
    assert_eq!(resp.result.unwrap()["capacity"], json!(5));
}

#[test]
fn closed_port_is_refused() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let req = RpcRequest::new(RpcKind::ServerStatus, Value::Null);
    let err = rpc_call(&format!("127.0.0.1:{port}"), &req, Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, RpcError::ConnectionRefused(_)), "{err:?}");
    assert!(err.is_unavailable());
}

#[test]
fn mismatched_request_id_is_malformed() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let fake = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let _ = decode_frame(&mut s).unwrap();
        let resp = RpcResponse::ok("someone-else", json!({}));
        write_frame(&mut s, &resp.encode()).unwrap();
        let mut rest = Vec::new();
        let _ = s.read_to_end(&mut rest);
    });
    let req = RpcRequest::new(RpcKind::ServerStatus, Value::Null);
    let err = rpc_call(&addr, &req, Duration::from_secs(2)).unwrap_err();
    assert!(matches!(err, RpcError::MalformedPayload(_)), "{err:?}");
    fake.join().unwrap();
}

#[test]
fn garbage_frame_gets_bad_frame() {
    let server = common::many_to_one(1, 2);
    let mut s = std::net::TcpStream::connect(server.addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write_frame(&mut s, b"not json").unwrap();
    s.flush().unwrap();
    let body = decode_frame(&mut s).unwrap();
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["ok"], json!(false));
    assert_eq!(v["error"]["code"], json!("BAD_FRAME"));
}

#[test]
fn one_to_one_runs_each_agent_in_its_own_process() {
    let server = common::one_to_one(4);
    let client = ServerClient::new(server.addr());
    let a = client.create_agent(&AgentDef::new("a", "echo", Value::Null)).unwrap();
    let b = client.create_agent(&AgentDef::new("b", "sleep", json!({"ms": 300}))).unwrap();
    assert_eq!(content(&call(&a, user("one")).unwrap()), "one");
    assert_eq!(content(&call(&b, user("two")).unwrap()), "two");
    let status = client.status().unwrap();
    assert_eq!((status.mode, status.agent_count), (ServerMode::OneToOne, 2));
    client.stop_agent(a.agent_id()).unwrap();
    assert!(matches!(call(&a, user("x")), Err(ActorError::AgentNotFound(_))));
    assert_eq!(content(&call(&b, user("still")).unwrap()), "still");
}

#[test]
fn stop_races_with_calls() {
    let server = common::many_to_one(8, 64);
    let agents: Vec<_> = (0..16)
        .map(|i| create_remote(server.addr(), &AgentDef::new(format!("r{i}"), "sleep", json!({"ms": 20}))).unwrap())
        .collect();
    let client = ServerClient::new(server.addr());
    thread::scope(|s| {
        for a in &agents {
            s.spawn(move || {
                for _ in 0..10 {
                    match call(a, user("x")) {
                        Ok(p) => match resolve_payload(&p, T) {
                            Ok(m) => assert_eq!(m.content(), "x"),
                            Err(e) => assert!(
                                matches!(e, ActorError::TaskNotFound(_) | ActorError::AgentNotFound(_)),
                                "{e:?}"
                            ),
                        },
                        Err(ActorError::AgentNotFound(_)) => break,
                        Err(e) => panic!("unexpected {e:?}"),
                    }
                }
            });
        }
        for a in &agents {
            let _ = client.stop_agent(a.agent_id());
        }
    });
    assert_eq!(client.status().unwrap().agent_count, 0);
    // The server stays usable.
    let e = create_remote(server.addr(), &AgentDef::new("after", "echo", Value::Null)).unwrap();
    assert_eq!(content(&call(&e, user("ok")).unwrap()), "ok");
}
