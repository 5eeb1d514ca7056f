//! Fault-tolerant worker pools.
//!
//! A pool owns a set of job-backed workers and a master socket they all dial
//! into. Callers submit tasks with [`Pool::map`] (batch, input-ordered
//! results) or [`Pool::apply_async`] (one task, a waitable handle). Tasks are
//! dispatched at most once per attempt; every in-flight task sits in the
//! pending table, and when a worker dies — detected by backend polling,
//! missed heartbeats, or its connection dropping — its tasks are resubmitted
//! at the queue head with the attempt counter bumped. A task whose workers
//! keep dying is poisoned after `max_attempts` total attempts rather than
//! retried forever. Deterministic task errors (the function returned `Err`)
//! are never retried; they are delivered to the caller.
//!
//! Results are delivered exactly once: a task resubmitted after a worker
//! failure may in rare interleavings execute twice, but the first result
//! wins and duplicates are dropped.

mod pending;
mod scheduler;

pub use pending::{PendingEntry, PendingTable};

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Sender};

use crate::backend::{Backend, BackendError, JobSpec, ENV_HEARTBEAT_MS, ENV_MASTER_ADDR, ENV_WORKER_ID};
use crate::registry::FunctionId;
use crate::task::{TaskId, TaskIdSource, TaskResult, TaskSpec, WorkerId};
use crate::wire::MAX_PAYLOAD;

use scheduler::{Event, Waiter};

/// Bytes of fixed Task-frame payload before the args: id, function, attempt.
const TASK_FRAME_OVERHEAD: usize = 16;

#[derive(Debug, Clone)]
pub struct PoolConfig {
    /// Initial number of workers. Must be at least 1.
    pub workers: usize,
    /// How often workers send heartbeats.
    pub heartbeat_interval: Duration,
    /// Silence longer than this marks a worker dead.
    pub heartbeat_timeout: Duration,
    /// Total execution attempts a task gets before it is poisoned.
    pub max_attempts: u32,
    /// Per-worker in-flight window: how many tasks a worker may hold at
    /// once. Values above 1 pipeline dispatch and amortize framing overhead.
    pub batch_size: usize,
    /// Command for process backends; defaults to this executable's `worker`
    /// subcommand.
    pub worker_command: Vec<String>,
    /// Master listen address; port 0 picks an ephemeral port.
    pub bind_addr: String,
    /// How long to wait for the first worker before giving up.
    pub ready_timeout: Duration,
}

impl Default for PoolConfig {
    fn default() -> Self {
        let self_exe = std::env::current_exe()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|_| "taskforge".to_string());
        PoolConfig {
            workers: 1,
            heartbeat_interval: Duration::from_millis(1000),
            heartbeat_timeout: Duration::from_millis(3000),
            max_attempts: 3,
            batch_size: 1,
            worker_command: vec![self_exe, "worker".to_string()],
            bind_addr: "127.0.0.1:0".to_string(),
            ready_timeout: Duration::from_secs(30),
        }
    }
}

impl PoolConfig {
    pub fn with_workers(workers: usize) -> Self {
        PoolConfig { workers, ..Default::default() }
    }

    fn validate(&self) -> Result<(), PoolError> {
        if self.workers == 0 {
            return Err(PoolError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PoolError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(PoolError::InvalidConfig("max_attempts must be at least 1".into()));
        }
        if self.worker_command.is_empty() {
            return Err(PoolError::InvalidConfig("worker_command must not be empty".into()));
        }
        if self.heartbeat_timeout < self.heartbeat_interval {
            return Err(PoolError::InvalidConfig(
                "heartbeat_timeout must be at least the heartbeat_interval".into(),
            ));
        }
        Ok(())
    }
}

/// Counters over a pool's whole life. Snapshots are consistent: taken by the
/// scheduler between events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolStats {
    /// Tasks accepted from callers.
    pub submitted: u64,
    /// Task dispatches to workers (counts each resubmission's dispatch).
    pub dispatched: u64,
    /// Results delivered to callers (success or task error).
    pub completed: u64,
    /// Task attempts lost to worker failure.
    pub failed_attempts: u64,
    /// Lost tasks that went back to the queue head.
    pub resubmissions: u64,
    /// Tasks abandoned after exhausting max_attempts.
    pub poisoned: u64,
    /// Tasks never resolved because the pool shut down first.
    pub cancelled: u64,
    /// Workers currently connected and serving (includes draining).
    pub active_workers: u64,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum PoolError {
    #[error("invalid pool config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no worker became ready within {0:?}")]
    NoWorkers(Duration),
    #[error("task {index} poisoned after {attempts} lost attempts: {detail}")]
    TaskPoisoned { index: usize, attempts: u32, detail: String },
    #[error("task {index} failed: {message}")]
    TaskFailed { index: usize, message: String },
    #[error("task {index} args exceed the {MAX_PAYLOAD} byte frame payload cap")]
    ArgsTooLarge { index: usize },
    #[error("unknown worker {0}")]
    UnknownWorker(WorkerId),
    #[error("pool is shut down")]
    PoolShutDown,
}

struct PoolInner {
    events: Sender<Event>,
    ids: TaskIdSource,
    addr: SocketAddr,
    /// Written by the scheduler just before it exits, so late callers can
    /// still read the closing snapshot.
    final_stats: Arc<Mutex<Option<PoolStats>>>,
    scheduler: Mutex<Option<JoinHandle<()>>>,
}

/// Handle to a running pool. Clones share the same pool.
#[derive(Clone)]
pub struct Pool {
    inner: Arc<PoolInner>,
}

impl std::fmt::Debug for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pool").field("addr", &self.inner.addr).finish_non_exhaustive()
    }
}

impl Pool {
    /// Starts a pool: binds the master socket, launches `cfg.workers` jobs on
    /// `backend`, and waits for the first worker to connect.
    pub fn create(backend: Arc<dyn Backend>, cfg: PoolConfig) -> Result<Pool, PoolError> {
        cfg.validate()?;
        let final_stats = Arc::new(Mutex::new(None));
        let (events, ready_rx, addr, scheduler) =
            scheduler::start(backend, cfg.clone(), final_stats.clone())?;
        let inner = Arc::new(PoolInner {
            events,
            ids: TaskIdSource::new(),
            addr,
            final_stats,
            scheduler: Mutex::new(Some(scheduler)),
        });
        let pool = Pool { inner };
        match ready_rx.recv_timeout(cfg.ready_timeout) {
            Ok(()) => Ok(pool),
            Err(_) => {
                pool.shutdown();
                Err(PoolError::NoWorkers(cfg.ready_timeout))
            }
        }
    }

    /// The address workers connect to.
    pub fn addr(&self) -> SocketAddr {
        self.inner.addr
    }

    /// Applies `function` to every input and returns outputs in input order.
    /// Fails if any task is poisoned, reports a task error, or the pool shuts
    /// down mid-flight; the error names the smallest failing input index.
    pub fn map(
        &self,
        function: FunctionId,
        inputs: Vec<Vec<u8>>,
    ) -> Result<Vec<Vec<u8>>, PoolError> {
        for (index, args) in inputs.iter().enumerate() {
            if args.len() > MAX_PAYLOAD - TASK_FRAME_OVERHEAD {
                return Err(PoolError::ArgsTooLarge { index });
            }
        }
        let n = inputs.len();
        let (tx, rx) = unbounded();
        for (index, args) in inputs.into_iter().enumerate() {
            let spec = TaskSpec { id: self.inner.ids.issue(), function, attempt: 0, args };
            let waiter = Waiter { index, reply: tx.clone() };
            if self.inner.events.send(Event::Submit { spec, waiter }).is_err() {
                return Err(PoolError::PoolShutDown);
            }
        }
        drop(tx);

        let mut outputs: BTreeMap<usize, Result<TaskResult, PoolError>> = BTreeMap::new();
        while outputs.len() < n {
            match rx.recv() {
                Ok((index, outcome)) => {
                    outputs.insert(index, outcome);
                }
                Err(_) => return Err(PoolError::PoolShutDown),
            }
        }
        let mut results = Vec::with_capacity(n);
        for (index, outcome) in outputs {
            match outcome {
                Ok(res) => match res.into_output() {
                    Ok(bytes) => results.push(bytes),
                    Err(message) => return Err(PoolError::TaskFailed { index, message }),
                },
                Err(e) => return Err(e),
            }
        }
        Ok(results)
    }

    /// Submits one task and returns immediately with a waitable handle.
    pub fn apply_async(
        &self,
        function: FunctionId,
        args: Vec<u8>,
    ) -> Result<TaskHandle, PoolError> {
        if args.len() > MAX_PAYLOAD - TASK_FRAME_OVERHEAD {
            return Err(PoolError::ArgsTooLarge { index: 0 });
        }
        let spec = TaskSpec { id: self.inner.ids.issue(), function, attempt: 0, args };
        let id = spec.id;
        let (tx, rx) = unbounded();
        let waiter = Waiter { index: 0, reply: tx };
        self.inner
            .events
            .send(Event::Submit { spec, waiter })
            .map_err(|_| PoolError::PoolShutDown)?;
        Ok(TaskHandle { id, rx })
    }

    /// Grows or shrinks the worker set. Growing reuses draining workers
    /// first, then launches fresh jobs. Shrinking stops idle workers
    /// immediately and drains busy ones — no in-flight task is lost.
    pub fn scale_to(&self, target: usize) -> Result<(), PoolError> {
        if target == 0 {
            return Err(PoolError::InvalidConfig(
                "scale target must be at least 1; use shutdown to stop the pool".into(),
            ));
        }
        let (tx, rx) = unbounded();
        self.inner
            .events
            .send(Event::ScaleTo { target, reply: tx })
            .map_err(|_| PoolError::PoolShutDown)?;
        rx.recv().map_err(|_| PoolError::PoolShutDown)?
    }

    /// Fault injection and ops: terminate one worker's job out from under
    /// it. The pool notices through its normal failure detection.
    pub fn kill_worker(&self, worker: WorkerId) -> Result<(), PoolError> {
        let (tx, rx) = unbounded();
        self.inner
            .events
            .send(Event::KillWorker { worker, reply: tx })
            .map_err(|_| PoolError::PoolShutDown)?;
        rx.recv().map_err(|_| PoolError::PoolShutDown)?
    }

    pub fn stats(&self) -> PoolStats {
        let (tx, rx) = unbounded();
        if self.inner.events.send(Event::GetStats { reply: tx }).is_ok() {
            if let Ok(stats) = rx.recv() {
                return stats;
            }
        }
        self.inner.final_stats.lock().unwrap().clone().unwrap_or_default()
    }

    /// Ids of workers currently connected, sorted.
    pub fn worker_ids(&self) -> Vec<WorkerId> {
        let (tx, rx) = unbounded();
        if self.inner.events.send(Event::GetWorkers { reply: tx }).is_ok() {
            if let Ok(ids) = rx.recv() {
                return ids;
            }
        }
        Vec::new()
    }

    /// Stops all workers, cancels queued work, and returns final statistics.
    /// Idempotent: repeated calls return the same snapshot.
    pub fn shutdown(&self) -> PoolStats {
        if self.inner.final_stats.lock().unwrap().is_none() {
            let (tx, rx) = unbounded();
            if self.inner.events.send(Event::Shutdown { reply: tx }).is_ok() {
                let _ = rx.recv();
            }
        }
        if let Some(handle) = self.inner.scheduler.lock().unwrap().take() {
            let _ = handle.join();
        }
        self.inner.final_stats.lock().unwrap().clone().unwrap_or_default()
    }
}

impl Drop for PoolInner {
    fn drop(&mut self) {
        if self.final_stats.lock().unwrap().is_none() {
            let (tx, rx) = unbounded();
            if self.events.send(Event::Shutdown { reply: tx }).is_ok() {
                let _ = rx.recv();
            }
        }
        if let Some(handle) = self.scheduler.lock().unwrap().take() {
            let _ = handle.join();
        }
    }
}

/// Waitable handle for one `apply_async` task.
pub struct TaskHandle {
    id: TaskId,
    rx: crossbeam_channel::Receiver<(usize, Result<TaskResult, PoolError>)>,
}

impl TaskHandle {
    pub fn id(&self) -> TaskId {
        self.id
    }

    /// Blocks until the task resolves. A `TaskResult` with a `TaskError`
    /// outcome is the task function's own failure; pool-level failures
    /// (poisoning, shutdown) come back as `PoolError`.
    pub fn wait(self) -> Result<TaskResult, PoolError> {
        match self.rx.recv() {
            Ok((_, outcome)) => outcome,
            Err(_) => Err(PoolError::PoolShutDown),
        }
    }

    /// Non-blocking check; `None` while the task is still in flight.
    pub fn try_wait(&self) -> Option<Result<TaskResult, PoolError>> {
        self.rx.try_recv().ok().map(|(_, outcome)| outcome)
    }
}

/// Builds the JobSpec for one worker slot.
fn worker_job_spec(cfg: &PoolConfig, addr: SocketAddr, worker: WorkerId) -> JobSpec {
    JobSpec::new(cfg.worker_command.clone())
        .with_env(ENV_MASTER_ADDR, &addr.to_string())
        .with_env(ENV_WORKER_ID, &worker.value().to_string())
        .with_env(ENV_HEARTBEAT_MS, &cfg.heartbeat_interval.as_millis().to_string())
}
