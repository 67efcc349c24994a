use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, LazyLock, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, RecvTimeoutError, Sender};
use serde_json::{Map, Value};
use thiserror::Error;

use super::frame::{decode_frame, write_frame, FrameError};
use super::protocol::{ErrorCode, RemoteError, RpcKind, RpcRequest, RpcResponse};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum RpcError {
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("connection refused by {0}")]
    ConnectionRefused(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("connection to {0} dropped")]
    Disconnected(String),
    #[error("frame error: {0}")]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("remote error {0}")]
    Remote(RemoteError),
}

impl RpcError {
    /// Transport-level failures that callers treat as "server unavailable".
    pub fn is_unavailable(&self) -> bool {
        !matches!(self, RpcError::Remote(_))
    }

    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            RpcError::Remote(e) => Some(e.code),
            RpcError::Timeout(_) => Some(ErrorCode::Timeout),
            _ => None,
        }
    }
}

fn resolve_addr(addr: &str) -> Result<SocketAddr, RpcError> {
    addr.to_socket_addrs()
        .map_err(|e| RpcError::Io(io::Error::new(e.kind(), format!("{addr}: {e}"))))?
        .next()
        .ok_or_else(|| RpcError::Io(io::Error::new(io::ErrorKind::NotFound, format!("{addr} resolves to nothing"))))
}

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream, RpcError> {
    let sock = resolve_addr(addr)?;
    match TcpStream::connect_timeout(&sock, timeout) {
        Ok(s) => {
            s.set_nodelay(true)?;
            Ok(s)
        }
        Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Err(RpcError::ConnectionRefused(addr.into())),
        Err(e) if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => {
            Err(RpcError::Timeout(format!("connect to {addr}")))
        }
        Err(e) => Err(e.into()),
    }
}

fn map_io(addr: &str, err: FrameError) -> RpcError {
    match err {
        FrameError::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
            RpcError::Timeout(addr.to_string())
        }
        FrameError::Closed | FrameError::Truncated => RpcError::Disconnected(addr.to_string()),
        other => RpcError::Frame(other),
    }
}

/// Sends one request on a fresh connection and waits for its response.
///
/// A response whose `request_id` differs from the request's is rejected as
/// malformed.
pub fn rpc_call(addr: &str, req: &RpcRequest, timeout: Duration) -> Result<RpcResponse, RpcError> {
    let mut stream = connect(addr, timeout.min(CONNECT_TIMEOUT))?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    write_frame(&mut stream, &req.encode()).map_err(|e| map_io(addr, e))?;
    let body = decode_frame(&mut stream).map_err(|e| map_io(addr, e))?;
    let resp = RpcResponse::decode(&body).map_err(RpcError::MalformedPayload)?;
    if resp.request_id != req.request_id {
        return Err(RpcError::MalformedPayload(format!(
            "response id {} does not match request {}",
            resp.request_id, req.request_id
        )));
    }
    let _ = stream.shutdown(Shutdown::Both);
    Ok(resp)
}

type Pending = Arc<Mutex<HashMap<String, Sender<Result<RpcResponse, RpcError>>>>>;

/// Persistent connection that pipelines many requests and matches responses
/// back to callers by `request_id`.
pub struct RpcClient {
    addr: String,
    writer: Mutex<TcpStream>,
    pending: Pending,
    alive: Arc<AtomicBool>,
    calls: AtomicU64,
}

impl RpcClient {
    pub fn connect(addr: &str) -> Result<Arc<Self>, RpcError> {
        let stream = connect(addr, CONNECT_TIMEOUT)?;
        stream.set_write_timeout(Some(Duration::from_secs(30)))?;
        let reader = stream.try_clone()?;
        let client = Arc::new(Self {
            addr: addr.to_string(),
            writer: Mutex::new(stream),
            pending: Arc::new(Mutex::new(HashMap::new())),
            alive: Arc::new(AtomicBool::new(true)),
            calls: AtomicU64::new(0),
        });
        let pending = client.pending.clone();
        let alive = client.alive.clone();
        let name = addr.to_string();
        thread::Builder::new()
            .name(format!("rpc-reader-{addr}"))
            .spawn(move || read_loop(name, reader, pending, alive))?;
        Ok(client)
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::Acquire)
    }

    /// Number of requests issued through this connection.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn call(&self, req: &RpcRequest, timeout: Duration) -> Result<RpcResponse, RpcError> {
        if !self.is_alive() {
            return Err(RpcError::Disconnected(self.addr.clone()));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = bounded(1);
        self.pending.lock().unwrap().insert(req.request_id.clone(), tx);
        let written = {
            let mut w = self.writer.lock().unwrap();
            write_frame(&mut *w, &req.encode())
        };
        if let Err(e) = written {
            self.pending.lock().unwrap().remove(&req.request_id);
            self.alive.store(false, Ordering::Release);
            return Err(map_io(&self.addr, e));
        }
        match rx.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&req.request_id);
                Err(RpcError::Timeout(format!("{:?} on {}", req.kind, self.addr)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(RpcError::Disconnected(self.addr.clone())),
        }
    }

    /// Issues a request and unwraps an error response into [`RpcError::Remote`].
    pub fn request(&self, kind: RpcKind, payload: Value, timeout: Duration) -> Result<Map<String, Value>, RpcError> {
        let req = RpcRequest::new(kind, payload);
        self.call(&req, timeout)?.result.map_err(RpcError::Remote)
    }
}

impl Drop for RpcClient {
    fn drop(&mut self) {
        if let Ok(w) = self.writer.lock() {
            let _ = w.shutdown(Shutdown::Both);
        }
    }
}

fn read_loop(addr: String, mut reader: TcpStream, pending: Pending, alive: Arc<AtomicBool>) {
    loop {
        let body = match decode_frame(&mut reader) {
            Ok(b) => b,
            Err(e) => {
                tracing::debug!(%addr, error = %e, "rpc connection closed");
                break;
            }
        };
        match RpcResponse::decode(&body) {
            Ok(resp) => {
                let waiter = pending.lock().unwrap().remove(&resp.request_id);
                match waiter {
                    Some(tx) => {
                        let _ = tx.send(Ok(resp));
                    }
                    None => tracing::debug!(%addr, id = %resp.request_id, "dropping response with no waiter"),
                }
            }
            Err(e) => {
                tracing::warn!(%addr, error = %e, "malformed response frame; closing connection");
                break;
            }
        }
    }
    alive.store(false, Ordering::Release);
    for (_, tx) in pending.lock().unwrap().drain() {
        let _ = tx.send(Err(RpcError::Disconnected(addr.clone())));
    }
}

/// Shared persistent connections keyed by address.
#[derive(Default)]
pub struct ClientPool {
    clients: Mutex<HashMap<String, Arc<RpcClient>>>,
    total: AtomicU64,
}

static POOL: LazyLock<ClientPool> = LazyLock::new(ClientPool::default);

/// The process-wide connection pool used by proxies and placeholders.
pub fn pool() -> &'static ClientPool {
    &POOL
}

impl ClientPool {
    pub fn get(&self, addr: &str) -> Result<Arc<RpcClient>, RpcError> {
        let mut clients = self.clients.lock().unwrap();
        if let Some(c) = clients.get(addr) {
            if c.is_alive() {
                return Ok(c.clone());
            }
        }
        let c = RpcClient::connect(addr)?;
        clients.insert(addr.to_string(), c.clone());
        Ok(c)
    }

    pub fn request(
        &self,
        addr: &str,
        kind: RpcKind,
        payload: Value,
        timeout: Duration,
    ) -> Result<Map<String, Value>, RpcError> {
        self.total.fetch_add(1, Ordering::Relaxed);
        self.get(addr)?.request(kind, payload, timeout)
    }

    /// Requests issued through this pool to `addr` over its current connection.
    pub fn calls_to(&self, addr: &str) -> u64 {
        self.clients.lock().unwrap().get(addr).map(|c| c.calls()).unwrap_or(0)
    }

    pub fn total_calls(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    pub fn forget(&self, addr: &str) {
        self.clients.lock().unwrap().remove(addr);
    }
}
