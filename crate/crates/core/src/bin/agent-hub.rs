//! Lifecycle hub: server registry, heartbeats and the HTTP API.

use std::process::ExitCode;

use agentsim::manager::{serve, Registry};
use clap::Parser;

#[derive(Parser, Debug)]
#[command(name = "agent-hub", about = "Registry and HTTP API for a fleet of agent servers")]
struct Args {
    /// Address to serve the HTTP API on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
}

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        .expect("SIGTERM handler installs");
    tokio::select! {
        _ = ctrl_c => {}
        _ = term.recv() => {}
    }
    tracing::info!("shutting down");
}

#[tokio::main]
async fn main() -> ExitCode {
    agentsim::init_tracing();
    let args = Args::parse();
    let listener = match tokio::net::TcpListener::bind(&args.listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("agent-hub: cannot bind {}: {e}", args.listen);
            return ExitCode::from(2);
        }
    };
    let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| args.listen.clone());
    println!("LISTENING {addr}");
    match serve(listener, Registry::new(), shutdown_signal()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("agent-hub: {e}");
            ExitCode::from(3)
        }
    }
}
