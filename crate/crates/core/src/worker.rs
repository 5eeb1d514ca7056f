//! Worker runtime: connects to the master, announces itself, executes tasks.
//!
//! The same loop backs both real worker processes (via the `worker` CLI
//! subcommand) and simulated in-process workers. On connect the worker sends
//! `Control(Hello)`, then serves `Task` frames until the master says
//! `Control(Shutdown)` or the connection dies. A background thread sends
//! heartbeats at a fixed interval. Task functions that return `Err` produce a
//! task-error result; they do not kill the worker.

use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::registry::Registry;
use crate::task::{TaskOutcome, TaskResult, WorkerId};
use crate::wire::{self, ConnError, Control, FrameSender, Message};

pub const DEFAULT_HEARTBEAT_INTERVAL: Duration = Duration::from_millis(1000);

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub master_addr: String,
    pub worker_id: WorkerId,
    pub heartbeat_interval: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("connect to master at {addr}: {detail}")]
    Connect { addr: String, detail: String },
    #[error("connection to master lost: {0}")]
    ConnectionLost(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Scripted misbehavior for simulated workers. `fail_after: Some(n)` makes
/// the worker die abruptly upon receiving its (n+1)-th task — after
/// completing n — so it always dies holding work. `hang_after` is the same
/// trigger but the worker stays alive and silent (no heartbeats, no reads).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FailurePlan {
    pub fail_after: Option<usize>,
    pub hang_after: Option<usize>,
}

/// Hooks the simulated backend uses to reach into a running worker thread.
#[derive(Debug, Default)]
pub(crate) struct SimControls {
    pub kill: AtomicBool,
    pub socket: Mutex<Option<TcpStream>>,
}

impl SimControls {
    /// Stops the worker: the loop observes the flag once its socket dies.
    pub fn stop(&self) {
        self.kill.store(true, Ordering::SeqCst);
        if let Some(sock) = self.socket.lock().unwrap().as_ref() {
            let _ = sock.shutdown(std::net::Shutdown::Both);
        }
    }
}

#[derive(Debug)]
pub(crate) enum WorkerExit {
    CleanShutdown,
    ScriptedFailure,
    Terminated,
    ConnectFailed(String),
    ConnectionLost(String),
    ProtocolError(String),
}

/// Entry point for a real worker process. Returns once the master shuts the
/// worker down; errors are connection or protocol failures.
pub fn run_worker(opts: WorkerOptions, registry: &Registry) -> Result<(), WorkerError> {
    match worker_loop(
        &opts.master_addr,
        opts.worker_id,
        registry,
        opts.heartbeat_interval,
        FailurePlan::default(),
        None,
    ) {
        WorkerExit::CleanShutdown => Ok(()),
        WorkerExit::ConnectFailed(detail) => {
            Err(WorkerError::Connect { addr: opts.master_addr, detail })
        }
        WorkerExit::ConnectionLost(detail) => Err(WorkerError::ConnectionLost(detail)),
        WorkerExit::ProtocolError(detail) => Err(WorkerError::Protocol(detail)),
        // scripted exits only happen with a plan, which real workers never have
        WorkerExit::ScriptedFailure | WorkerExit::Terminated => Ok(()),
    }
}

pub(crate) fn worker_loop(
    master_addr: &str,
    worker_id: WorkerId,
    registry: &Registry,
    heartbeat_interval: Duration,
    plan: FailurePlan,
    controls: Option<&SimControls>,
) -> WorkerExit {
    let stream = match TcpStream::connect(master_addr) {
        Ok(s) => s,
        Err(e) => return WorkerExit::ConnectFailed(e.to_string()),
    };
    if let Some(controls) = controls {
        if let Ok(clone) = stream.try_clone() {
            *controls.socket.lock().unwrap() = Some(clone);
        }
    }
    let (tx, mut rx) = match wire::split(stream) {
        Ok(pair) => pair,
        Err(e) => return WorkerExit::ConnectFailed(e.to_string()),
    };
    if let Err(e) = tx.send(&Message::Control(Control::Hello { worker: worker_id })) {
        return WorkerExit::ConnectionLost(e.to_string());
    }

    let hb_stop = Arc::new(AtomicBool::new(false));
    let hb_thread = spawn_heartbeats(tx.clone(), worker_id, heartbeat_interval, Arc::clone(&hb_stop));
    let stop_heartbeats = || {
        hb_stop.store(true, Ordering::SeqCst);
        hb_thread.thread().unpark();
    };

    let killed = |detail: String| -> WorkerExit {
        match controls {
            Some(c) if c.kill.load(Ordering::SeqCst) => WorkerExit::Terminated,
            _ => WorkerExit::ConnectionLost(detail),
        }
    };

    let mut completed = 0usize;
    loop {
        let msg = match rx.recv() {
            Ok(m) => m,
            Err(ConnError::Wire(e)) => {
                stop_heartbeats();
                return WorkerExit::ProtocolError(e.to_string());
            }
            Err(e) => {
                stop_heartbeats();
                return killed(e.to_string());
            }
        };
        match msg {
            Message::Task(spec) => {
                if plan.fail_after == Some(completed) {
                    // die abruptly, task in hand: no result, no shutdown frame
                    stop_heartbeats();
                    tx.shutdown();
                    return WorkerExit::ScriptedFailure;
                }
                if plan.hang_after == Some(completed) {
                    stop_heartbeats();
                    loop {
                        if let Some(c) = controls {
                            if c.kill.load(Ordering::SeqCst) {
                                return WorkerExit::Terminated;
                            }
                        }
                        thread::sleep(Duration::from_millis(20));
                    }
                }
                let outcome = match registry.lookup(spec.function) {
                    Ok(f) => match f(&spec.args) {
                        Ok(bytes) => TaskOutcome::Success(bytes),
                        Err(msg) => TaskOutcome::TaskError(msg),
                    },
                    Err(e) => TaskOutcome::TaskError(e.to_string()),
                };
                let result =
                    Message::Result(TaskResult { id: spec.id, worker: worker_id, outcome });
                if let Err(e) = tx.send(&result) {
                    stop_heartbeats();
                    return killed(e.to_string());
                }
                completed += 1;
            }
            Message::Control(Control::Shutdown) => {
                stop_heartbeats();
                return WorkerExit::CleanShutdown;
            }
            // nothing else is addressed to a worker
            _ => {}
        }
    }
}

fn spawn_heartbeats(
    tx: FrameSender,
    worker_id: WorkerId,
    interval: Duration,
    stop: Arc<AtomicBool>,
) -> thread::JoinHandle<()> {
    let started = Instant::now();
    thread::Builder::new()
        .name(format!("heartbeat-{worker_id}"))
        .spawn(move || loop {
            thread::park_timeout(interval);
            if stop.load(Ordering::SeqCst) {
                return;
            }
            let beat = Message::Heartbeat {
                worker: worker_id,
                uptime_ms: started.elapsed().as_millis() as u64,
            };
            if tx.send(&beat).is_err() {
                return;
            }
        })
        .expect("spawn heartbeat thread")
}
