//! Task table of an agent server: task id to pending or finished result,
//! with waiters parked on pending entries.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::message::Message;
use crate::transport::{ErrorCode, RemoteError};

pub(crate) type TaskResult = Result<Message, RemoteError>;

/// Fire-once callback for a resolve request.
pub(crate) struct Waiter {
    fired: AtomicBool,
    respond: Box<dyn Fn(TaskResult) + Send + Sync>,
}

impl Waiter {
    pub(crate) fn new(respond: impl Fn(TaskResult) + Send + Sync + 'static) -> Arc<Self> {
        Arc::new(Self { fired: AtomicBool::new(false), respond: Box::new(respond) })
    }

    pub(crate) fn fire(&self, result: TaskResult) {
        if !self.fired.swap(true, Ordering::AcqRel) {
            (self.respond)(result);
        }
    }

    pub(crate) fn has_fired(&self) -> bool {
        self.fired.load(Ordering::Acquire)
    }
}

enum Entry {
    Pending(Vec<Arc<Waiter>>),
    Done { result: TaskResult, at: Instant },
}

pub(crate) struct TaskTable {
    entries: Mutex<HashMap<String, Entry>>,
    ttl: Duration,
}

pub(crate) enum Lookup {
    Ready(TaskResult),
    Parked,
    Missing,
}

impl TaskTable {
    pub(crate) fn new(ttl: Duration) -> Self {
        Self { entries: Mutex::new(HashMap::new()), ttl }
    }

    pub(crate) fn create(&self) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        self.entries.lock().unwrap().insert(id.clone(), Entry::Pending(Vec::new()));
        id
    }

    pub(crate) fn complete(&self, task_id: &str, result: TaskResult) {
        let waiters = {
            let mut entries = self.entries.lock().unwrap();
            match entries.get_mut(task_id) {
                Some(entry @ Entry::Pending(_)) => {
                    let prev = std::mem::replace(entry, Entry::Done { result: result.clone(), at: Instant::now() });
                    match prev {
                        Entry::Pending(w) => w,
                        Entry::Done { .. } => unreachable!(),
                    }
                }
                _ => return,
            }
        };
        for w in waiters {
            w.fire(result.clone());
        }
    }

    /// Drops a pending task; parked waiters learn it no longer exists.
    pub(crate) fn cancel(&self, task_id: &str) {
        let removed = self.entries.lock().unwrap().remove(task_id);
        if let Some(Entry::Pending(waiters)) = removed {
            for w in waiters {
                w.fire(Err(RemoteError::new(ErrorCode::TaskNotFound, format!("task {task_id} was cancelled"))));
            }
        }
    }

    /// Returns the result if ready, or parks `waiter` until it is.
    pub(crate) fn wait(&self, task_id: &str, waiter: &Arc<Waiter>) -> Lookup {
        let mut entries = self.entries.lock().unwrap();
        match entries.get_mut(task_id) {
            Some(Entry::Done { result, .. }) => Lookup::Ready(result.clone()),
            Some(Entry::Pending(ws)) => {
                ws.retain(|w| !w.has_fired());
                ws.push(waiter.clone());
                Lookup::Parked
            }
            None => Lookup::Missing,
        }
    }

    #[cfg(test)]
    pub(crate) fn contains(&self, task_id: &str) -> bool {
        self.entries.lock().unwrap().contains_key(task_id)
    }

    /// Removes finished entries older than the TTL.
    pub(crate) fn sweep(&self, now: Instant) -> usize {
        let mut entries = self.entries.lock().unwrap();
        let before = entries.len();
        entries.retain(|_, e| match e {
            Entry::Done { at, .. } => now.duration_since(*at) < self.ttl,
            Entry::Pending(_) => true,
        });
        before - entries.len()
    }

    pub(crate) fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }
}
