#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};

use agentsim::actor::{AgentServer, ServerConfig, ServerHandle, ServerMode};

pub fn server_exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_agent-server"))
}

/// In-process many-to-one server on a free port.
pub fn many_to_one(workers: usize, capacity: usize) -> ServerHandle {
    let cfg = ServerConfig::new("127.0.0.1:0", ServerMode::ManyToOne).workers(workers).capacity(capacity);
    AgentServer::bind(cfg).expect("bind").spawn()
}

/// In-process one-to-one server whose children are the built agent-server.
pub fn one_to_one(capacity: usize) -> ServerHandle {
    let mut cfg = ServerConfig::new("127.0.0.1:0", ServerMode::OneToOne).capacity(capacity);
    cfg.child_exe = Some(server_exe());
    AgentServer::bind(cfg).expect("bind").spawn()
}

/// An `agent-server` process; killed on drop.
pub struct ServerProcess {
    pub child: Child,
    pub addr: String,
}

impl ServerProcess {
    pub fn start(extra: &[&str]) -> Self {
        let mut child = Command::new(server_exe())
            .args(["--listen", "127.0.0.1:0"])
            .args(extra)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("agent-server starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).expect("LISTENING line");
        let addr = line.trim().strip_prefix("LISTENING ").expect("LISTENING prefix").to_string();
        Self { child, addr }
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        agentsim::transport::pool().forget(&self.addr);
    }
}
