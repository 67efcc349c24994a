//! Hosts agents behind the RPC protocol.
//!
//! Prints `LISTENING host:port` on stdout once bound. SIGTERM or SIGINT
//! stops it cleanly; with `--child` it also stops when stdin closes, which
//! is how a parent server reaps its per-agent processes.

use std::io::{Read, Write};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use agentsim::actor::{default_worker_count, AgentServer, ServerConfig, ServerMode};
use clap::Parser;

#[derive(Parser, Debug)]
#[command(name = "agent-server", about = "Host agents for distributed simulations")]
struct Args {
    /// Address to bind, e.g. 127.0.0.1:7000 (port 0 picks a free port).
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    /// one-to-one (a process per agent) or many-to-one (shared worker pool).
    #[arg(long, default_value = "many-to-one")]
    mode: ServerMode,
    /// Maximum number of hosted agents.
    #[arg(long, default_value_t = 10_000)]
    capacity: usize,
    /// Worker threads in many-to-one mode (default: 4 per CPU).
    #[arg(long)]
    workers: Option<usize>,
    /// Hub URL to register with and send heartbeats to.
    #[arg(long)]
    hub: Option<String>,
    /// Host name advertised in placeholders and to the hub.
    #[arg(long)]
    advertise_host: Option<String>,
    /// Exit when stdin closes (set by a parent server).
    #[arg(long, hide = true)]
    child: bool,
}

fn main() -> ExitCode {
    agentsim::init_tracing();
    let args = Args::parse();
    let mut cfg = ServerConfig::new(&args.listen, args.mode)
        .capacity(args.capacity)
        .workers(args.workers.unwrap_or_else(default_worker_count));
    cfg.hub_url = args.hub.clone();
    cfg.advertise_host = args.advertise_host.clone();

    let server = match AgentServer::bind(cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("agent-server: {e}");
            return ExitCode::from(2);
        }
    };
    println!("LISTENING {}", server.addr());
    let _ = std::io::stdout().flush();

    let stopper = server.stopper();
    let term = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        if let Err(e) = signal_hook::flag::register(sig, term.clone()) {
            eprintln!("agent-server: cannot install signal handler: {e}");
            return ExitCode::from(2);
        }
    }
    {
        let (term, stopper) = (term.clone(), stopper.clone());
        thread::spawn(move || {
            while !term.load(Ordering::Relaxed) {
                thread::sleep(Duration::from_millis(50));
            }
            tracing::info!("signal received, shutting down");
            stopper.stop();
        });
    }
    if args.child {
        thread::spawn(move || {
            let mut sink = [0u8; 64];
            let mut stdin = std::io::stdin();
            while matches!(stdin.read(&mut sink), Ok(n) if n > 0) {}
            tracing::debug!("parent closed stdin, shutting down");
            stopper.stop();
        });
    }

    match server.serve() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("agent-server: {e}");
            ExitCode::from(3)
        }
    }
}
