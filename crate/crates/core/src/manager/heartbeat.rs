//! Server side of the hub protocol: register, then push status and
//! process metrics every interval. An unknown-server reply (for example
//! after a hub restart) triggers re-registration.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::client::HubClient;
use super::registry::Metrics;
use crate::actor::ServerStatus;

/// CPU usage of this process between successive samples, from /proc.
struct CpuSampler {
    last: Option<(Instant, u64)>,
    ticks_per_s: f64,
}

impl CpuSampler {
    fn new() -> Self {
        // SAFETY: sysconf has no preconditions.
        let ticks = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
        Self { last: None, ticks_per_s: if ticks > 0 { ticks as f64 } else { 100.0 } }
    }

    fn cpu_ticks() -> Option<u64> {
        let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
        // Fields after the parenthesised command name; utime and stime are
        // the 14th and 15th fields overall.
        let rest = &stat[stat.rfind(')')? + 2..];
        let fields: Vec<&str> = rest.split_whitespace().collect();
        Some(fields.get(11)?.parse::<u64>().ok()? + fields.get(12)?.parse::<u64>().ok()?)
    }

    fn sample(&mut self) -> f64 {
        let (now, ticks) = match Self::cpu_ticks() {
            Some(t) => (Instant::now(), t),
            None => return 0.0,
        };
        let pct = match self.last {
            Some((t0, k0)) => {
                let wall = now.duration_since(t0).as_secs_f64();
                if wall > 0.0 {
                    100.0 * (ticks.saturating_sub(k0) as f64 / self.ticks_per_s) / wall
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        self.last = Some((now, ticks));
        pct
    }
}

/// Resident set size of this process.
pub fn resident_bytes() -> u64 {
    let pages = std::fs::read_to_string("/proc/self/statm")
        .ok()
        .and_then(|s| s.split_whitespace().nth(1).and_then(|p| p.parse::<u64>().ok()))
        .unwrap_or(0);
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    pages * if page > 0 { page as u64 } else { 4096 }
}

pub fn spawn_heartbeat(
    hub_url: String,
    interval: Duration,
    shutdown: Arc<AtomicBool>,
    status: impl Fn() -> Option<ServerStatus> + Send + 'static,
) -> JoinHandle<()> {
    thread::Builder::new()
        .name("hub-heartbeat".into())
        .spawn(move || {
            let hub = HubClient::new(hub_url);
            let mut cpu = CpuSampler::new();
            let mut server_id: Option<String> = None;
            while !shutdown.load(Ordering::Acquire) {
                let Some(st) = status() else { break };
                let metrics = Metrics { cpu_percent: cpu.sample(), mem_bytes: resident_bytes(), uptime_s: st.uptime_s };
                let addr = format!("{}:{}", st.host, st.port);
                if server_id.is_none() {
                    match hub.register(&addr, st.mode, st.capacity) {
                        Ok(id) => {
                            tracing::info!(server_id = %id, "registered with hub");
                            server_id = Some(id);
                        }
                        Err(e) => tracing::warn!(error = %e, "hub registration failed"),
                    }
                }
                if let Some(id) = &server_id {
                    match hub.heartbeat(id, st.agent_count, metrics) {
                        Ok(()) => {}
                        Err(e) if e.code() == Some("UNKNOWN_SERVER") => {
                            tracing::info!("hub forgot this server; registering again");
                            server_id = None;
                            continue;
                        }
                        Err(e) => tracing::warn!(error = %e, "heartbeat failed"),
                    }
                }
                let deadline = Instant::now() + interval;
                while Instant::now() < deadline && !shutdown.load(Ordering::Acquire) {
                    thread::sleep(Duration::from_millis(50).min(interval));
                }
            }
        })
        .expect("heartbeat thread spawns")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proc_metrics_are_readable() {
        assert!(resident_bytes() > 0);
        let mut s = CpuSampler::new();
        s.sample();
        let mut x = 0u64;
        for i in 0..2_000_000u64 {
            x = x.wrapping_add(i * i);
        }
        std::hint::black_box(x);
        assert!(s.sample() >= 0.0);
    }
}
