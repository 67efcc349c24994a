//! Actor-based runtime for large multi-agent simulations.
//!
//! Agents exchange immutable [`message::Message`]s. An agent can run in this
//! process or on an agent server, behind a proxy whose calls return
//! placeholders at once; workflows read the same either way. Environments
//! hold shared state and notify agents through listeners, the hub keeps
//! track of a fleet of agent servers, and the [`game`] module builds the
//! guess-a-fraction-of-the-average game on top.

pub mod actor;
pub mod backend;
pub mod environment;
pub mod game;
pub mod manager;
pub mod message;
pub mod population;
pub mod sim;
pub mod transport;

/// Installs a `tracing` subscriber honouring `RUST_LOG` (default `info`),
/// writing to stderr.
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}
