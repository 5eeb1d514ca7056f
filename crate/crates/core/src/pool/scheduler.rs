//! The pool's event loop.
//!
//! One scheduler thread owns all pool state — task queue, pending table,
//! worker roster, counters — and everything else (caller handles, connection
//! readers, the accept loop) talks to it through a single event channel.
//! That keeps the failure logic sequential: a worker death, a late result,
//! and a scale request can't interleave halfway.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::backend::{Backend, JobHandle};
use crate::task::{TaskId, TaskResult, TaskSpec, WorkerId};
use crate::wire::{split, Control, FrameSender, Message};

use super::pending::PendingTable;
use super::{worker_job_spec, PoolConfig, PoolError, PoolStats};

/// Backend jobs are polled and worker replacements reconciled at this cadence.
const POLL_INTERVAL: Duration = Duration::from_millis(100);
/// Event-loop wakeup bound so ticks run even when the pool is idle.
const IDLE_WAKEUP: Duration = Duration::from_millis(50);
/// A worker gets at least this long to go from job submission to Hello.
const MIN_LAUNCH_GRACE: Duration = Duration::from_secs(5);

/// Where one map/apply_async task's answer goes.
pub(super) struct Waiter {
    pub index: usize,
    pub reply: Sender<(usize, Result<TaskResult, PoolError>)>,
}

pub(super) enum Event {
    Submit { spec: TaskSpec, waiter: Waiter },
    Hello { worker: WorkerId, conn: FrameSender },
    Incoming { worker: WorkerId, msg: Message },
    ConnClosed { worker: WorkerId },
    ScaleTo { target: usize, reply: Sender<Result<(), PoolError>> },
    KillWorker { worker: WorkerId, reply: Sender<Result<(), PoolError>> },
    GetStats { reply: Sender<PoolStats> },
    GetWorkers { reply: Sender<Vec<WorkerId>> },
    Shutdown { reply: Sender<PoolStats> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WorkerState {
    /// Job submitted, worker hasn't connected yet.
    Launching,
    /// Connected and eligible for dispatch.
    Live,
    /// Scale-down victim finishing its in-flight tasks; gets no new work.
    Draining,
    /// Told to shut down; we're waiting for the job to end.
    Stopping,
}

struct WorkerEntry {
    job: JobHandle,
    state: WorkerState,
    conn: Option<FrameSender>,
    tasks: HashSet<TaskId>,
    /// Last sign of life; doubles as the state-entry time for Launching
    /// (job submission) and Stopping (shutdown sent).
    last_seen: Instant,
}

struct Scheduler {
    backend: Arc<dyn Backend>,
    cfg: PoolConfig,
    addr: SocketAddr,
    events: Receiver<Event>,
    ready: Option<Sender<()>>,
    accept_stop: Arc<AtomicBool>,
    final_stats: Arc<Mutex<Option<PoolStats>>>,

    queue: VecDeque<TaskSpec>,
    waiters: HashMap<TaskId, Waiter>,
    pending: PendingTable,
    delivered: HashSet<TaskId>,
    workers: BTreeMap<WorkerId, WorkerEntry>,
    desired: usize,
    next_worker_id: u32,
    stats: PoolStats,
    shutting_down: bool,
    last_poll: Instant,
}

/// Binds the master socket, starts the accept loop and the scheduler thread,
/// and submits the initial worker jobs. Returns the event sender, a channel
/// signalled when the first worker connects, the bound address, and the
/// scheduler join handle.
#[allow(clippy::type_complexity)]
pub(super) fn start(
    backend: Arc<dyn Backend>,
    cfg: PoolConfig,
    final_stats: Arc<Mutex<Option<PoolStats>>>,
) -> Result<(Sender<Event>, Receiver<()>, SocketAddr, thread::JoinHandle<()>), PoolError> {
    let listener = TcpListener::bind(&cfg.bind_addr)
        .map_err(|e| PoolError::InvalidConfig(format!("bind {}: {e}", cfg.bind_addr)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| PoolError::InvalidConfig(format!("local_addr: {e}")))?;

    let (event_tx, event_rx) = unbounded();
    let (ready_tx, ready_rx) = unbounded();
    let accept_stop = Arc::new(AtomicBool::new(false));

    let mut sched = Scheduler {
        backend,
        cfg,
        addr,
        events: event_rx,
        ready: Some(ready_tx),
        accept_stop: accept_stop.clone(),
        final_stats,
        queue: VecDeque::new(),
        waiters: HashMap::new(),
        pending: PendingTable::new(),
        delivered: HashSet::new(),
        workers: BTreeMap::new(),
        desired: 0,
        next_worker_id: 1,
        stats: PoolStats::default(),
        shutting_down: false,
        last_poll: Instant::now(),
    };
    sched.desired = sched.cfg.workers;
    for _ in 0..sched.cfg.workers {
        sched.spawn_worker()?;
    }

    spawn_accept_loop(listener, event_tx.clone(), accept_stop);
    let handle = thread::Builder::new()
        .name("pool-scheduler".to_string())
        .spawn(move || sched.run())
        .expect("spawn scheduler thread");

    Ok((event_tx, ready_rx, addr, handle))
}

fn spawn_accept_loop(listener: TcpListener, events: Sender<Event>, stop: Arc<AtomicBool>) {
    thread::Builder::new()
        .name("pool-accept".to_string())
        .spawn(move || loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    if stop.load(Ordering::SeqCst) {
                        return;
                    }
                    spawn_conn_reader(stream, events.clone());
                }
                Err(_) => {
                    if stop.load(Ordering::SeqCst) {
                        return;
                    }
                }
            }
        })
        .expect("spawn accept thread");
}

/// Reads one connection. The first frame must identify the worker; after
/// that every frame is forwarded to the scheduler until the socket dies.
fn spawn_conn_reader(stream: TcpStream, events: Sender<Event>) {
    thread::Builder::new()
        .name("pool-conn".to_string())
        .spawn(move || {
            let Ok((tx, mut rx)) = split(stream) else { return };
            let worker = match rx.recv() {
                Ok(Message::Control(Control::Hello { worker })) => worker,
                _ => {
                    tx.shutdown();
                    return;
                }
            };
            if events.send(Event::Hello { worker, conn: tx }).is_err() {
                return;
            }
            loop {
                match rx.recv() {
                    Ok(msg) => {
                        if events.send(Event::Incoming { worker, msg }).is_err() {
                            return;
                        }
                    }
                    Err(_) => {
                        let _ = events.send(Event::ConnClosed { worker });
                        return;
                    }
                }
            }
        })
        .expect("spawn connection thread");
}

impl Scheduler {
    fn run(mut self) {
        loop {
            match self.events.recv_timeout(IDLE_WAKEUP) {
                Ok(Event::Shutdown { reply }) => {
                    self.shutdown(reply);
                    return;
                }
                Ok(event) => self.handle(event),
                Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => {
                    // Every Pool handle is gone; nobody is left to observe
                    // results. Tear the workers down and exit.
                    let (tx, _rx) = unbounded();
                    self.shutdown(tx);
                    return;
                }
            }
            self.tick();
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Submit { spec, waiter } => {
                self.stats.submitted += 1;
                self.waiters.insert(spec.id, waiter);
                self.queue.push_back(spec);
                self.dispatch();
            }
            Event::Hello { worker, conn } => self.on_hello(worker, conn),
            Event::Incoming { worker, msg } => self.on_incoming(worker, msg),
            Event::ConnClosed { worker } => self.on_conn_closed(worker),
            Event::ScaleTo { target, reply } => {
                let outcome = self.scale_to(target);
                let _ = reply.send(outcome);
            }
            Event::KillWorker { worker, reply } => {
                let outcome = match self.workers.get(&worker) {
                    Some(entry) => {
                        self.backend.terminate_job(&entry.job).map_err(PoolError::from)
                    }
                    None => Err(PoolError::UnknownWorker(worker)),
                };
                let _ = reply.send(outcome);
            }
            Event::GetStats { reply } => {
                let _ = reply.send(self.snapshot());
            }
            Event::GetWorkers { reply } => {
                let ids = self
                    .workers
                    .iter()
                    .filter(|(_, w)| {
                        matches!(w.state, WorkerState::Live | WorkerState::Draining)
                    })
                    .map(|(id, _)| *id)
                    .collect();
                let _ = reply.send(ids);
            }
            Event::Shutdown { .. } => unreachable!("handled in run()"),
        }
    }

    fn snapshot(&self) -> PoolStats {
        let mut stats = self.stats.clone();
        stats.active_workers = self
            .workers
            .values()
            .filter(|w| matches!(w.state, WorkerState::Live | WorkerState::Draining))
            .count() as u64;
        stats
    }

    /// Launching plus Live: workers that count toward the desired size.
    fn live_ish(&self) -> usize {
        self.workers
            .values()
            .filter(|w| matches!(w.state, WorkerState::Launching | WorkerState::Live))
            .count()
    }

    fn spawn_worker(&mut self) -> Result<(), PoolError> {
        let worker = WorkerId::new(self.next_worker_id);
        self.next_worker_id += 1;
        let spec = worker_job_spec(&self.cfg, self.addr, worker);
        let handle = self.backend.submit_job(&spec)?;
        self.workers.insert(
            worker,
            WorkerEntry {
                job: handle,
                state: WorkerState::Launching,
                conn: None,
                tasks: HashSet::new(),
                last_seen: Instant::now(),
            },
        );
        Ok(())
    }

    fn on_hello(&mut self, worker: WorkerId, conn: FrameSender) {
        match self.workers.get_mut(&worker) {
            Some(entry) if entry.conn.is_none() => {
                entry.conn = Some(conn);
                entry.last_seen = Instant::now();
                if entry.state == WorkerState::Launching {
                    entry.state = WorkerState::Live;
                }
                if let Some(ready) = self.ready.take() {
                    let _ = ready.send(());
                }
                self.dispatch();
            }
            Some(_) => {
                // Duplicate hello for a worker that already has a live
                // connection: reject the newcomer.
                let _ = conn.send(&Message::Control(Control::Shutdown));
                conn.shutdown();
            }
            None => {
                // A stale worker from a previous incarnation or a job we
                // already gave up on. Tell it to exit.
                let _ = conn.send(&Message::Control(Control::Shutdown));
                conn.shutdown();
            }
        }
    }

    fn on_incoming(&mut self, worker: WorkerId, msg: Message) {
        if let Some(entry) = self.workers.get_mut(&worker) {
            entry.last_seen = Instant::now();
        }
        match msg {
            Message::Result(result) => self.on_result(worker, result),
            Message::Heartbeat { .. } => {}
            // Workers have no business sending anything else; ignore rather
            // than tearing the connection down over it.
            _ => {}
        }
    }

    fn on_result(&mut self, from: WorkerId, result: TaskResult) {
        let id = result.id;
        if self.delivered.contains(&id) {
            // A resubmitted task ran twice and the slower copy lost, or a
            // zombie reported a task we already poisoned. Drop it.
            return;
        }
        if let Some(entry) = self.pending.remove(id) {
            if let Some(owner) = self.workers.get_mut(&entry.worker) {
                owner.tasks.remove(&id);
            }
            self.maybe_drained(entry.worker);
        } else if let Some(pos) = self.queue.iter().position(|spec| spec.id == id) {
            // The task was resubmitted after its worker was declared dead,
            // but the old attempt's result made it back anyway. First result
            // wins; pull the requeued copy.
            self.queue.remove(pos);
        } else {
            // Unknown task id: nothing useful to do with it.
            return;
        }
        if let Some(w) = self.workers.get_mut(&from) {
            w.tasks.remove(&id);
        }
        self.delivered.insert(id);
        self.stats.completed += 1;
        if let Some(waiter) = self.waiters.remove(&id) {
            let _ = waiter.reply.send((waiter.index, Ok(result)));
        }
        self.maybe_drained(from);
        self.dispatch();
    }

    fn on_conn_closed(&mut self, worker: WorkerId) {
        let Some(entry) = self.workers.get(&worker) else { return };
        match entry.state {
            WorkerState::Stopping => self.remove_worker(worker),
            WorkerState::Draining if entry.tasks.is_empty() => self.remove_worker(worker),
            _ => self.fail_worker(worker, "connection lost"),
        }
    }

    /// Tears down a worker we told to stop: terminate the job for good
    /// measure and forget it. Its tasks are already elsewhere.
    fn remove_worker(&mut self, worker: WorkerId) {
        if let Some(entry) = self.workers.remove(&worker) {
            if let Some(conn) = &entry.conn {
                conn.shutdown();
            }
            let _ = self.backend.terminate_job(&entry.job);
        }
    }

    /// Declares a worker dead: its in-flight tasks go back to the queue head
    /// (or poison out), the job is terminated, and a replacement is launched
    /// if the pool is below its desired size.
    fn fail_worker(&mut self, worker: WorkerId, reason: &str) {
        let Some(entry) = self.workers.remove(&worker) else { return };
        if let Some(conn) = &entry.conn {
            conn.shutdown();
        }
        let _ = self.backend.terminate_job(&entry.job);

        let lost = self.pending.take_worker(worker);
        // Reverse order so the lowest task id ends up at the very front.
        for item in lost.into_iter().rev() {
            let spec = item.spec;
            self.stats.failed_attempts += 1;
            let attempt = spec.attempt + 1;
            if attempt >= self.cfg.max_attempts {
                self.stats.poisoned += 1;
                self.delivered.insert(spec.id);
                if let Some(waiter) = self.waiters.remove(&spec.id) {
                    let _ = waiter.reply.send((
                        waiter.index,
                        Err(PoolError::TaskPoisoned {
                            index: waiter.index,
                            attempts: attempt,
                            detail: format!("{}: {reason}", worker),
                        }),
                    ));
                }
            } else {
                self.stats.resubmissions += 1;
                self.queue.push_front(TaskSpec { attempt, ..spec });
            }
        }
        self.reconcile();
        self.dispatch();
    }

    /// Fills every live worker's in-flight window from the queue front.
    /// Frames per worker go out in one write.
    fn dispatch(&mut self) {
        if self.shutting_down {
            return;
        }
        // Least-loaded first, so a handful of tasks spreads across workers
        // instead of saturating the first window. `slots` tracks remaining
        // room; frames per worker are coalesced into one write.
        let mut slots: Vec<(WorkerId, usize)> = self
            .workers
            .iter()
            .filter(|(_, w)| w.state == WorkerState::Live && w.conn.is_some())
            .map(|(id, w)| (*id, w.tasks.len()))
            .collect();
        let mut frames: BTreeMap<WorkerId, Vec<Message>> = BTreeMap::new();
        while !self.queue.is_empty() {
            let Some(target) = slots
                .iter_mut()
                .filter(|(_, inflight)| *inflight < self.cfg.batch_size)
                .min_by_key(|(id, inflight)| (*inflight, *id))
            else {
                break;
            };
            let wid = target.0;
            target.1 += 1;
            let spec = self.queue.pop_front().expect("checked non-empty");
            let entry = self.workers.get_mut(&wid).expect("live worker present");
            entry.tasks.insert(spec.id);
            self.pending.insert(wid, spec.clone());
            self.stats.dispatched += 1;
            frames.entry(wid).or_default().push(Message::Task(spec));
        }
        let mut dead: Vec<WorkerId> = Vec::new();
        for (wid, batch) in &frames {
            let entry = self.workers.get(wid).expect("live worker present");
            let conn = entry.conn.as_ref().expect("dispatch target has conn");
            if conn.send_all(batch).is_err() {
                dead.push(*wid);
            }
        }
        for wid in dead {
            self.fail_worker(wid, "write to worker failed");
        }
    }

    /// If a draining worker has handed back its last task, tell it to exit.
    fn maybe_drained(&mut self, worker: WorkerId) {
        if let Some(entry) = self.workers.get_mut(&worker) {
            if entry.state == WorkerState::Draining && entry.tasks.is_empty() {
                if let Some(conn) = &entry.conn {
                    let _ = conn.send(&Message::Control(Control::Shutdown));
                }
                entry.state = WorkerState::Stopping;
                entry.last_seen = Instant::now();
            }
        }
    }

    fn scale_to(&mut self, target: usize) -> Result<(), PoolError> {
        if self.shutting_down {
            return Err(PoolError::PoolShutDown);
        }
        self.desired = target;
        self.reconcile();
        self.dispatch();
        Ok(())
    }

    /// Drives the worker roster toward `desired`: revives draining workers,
    /// launches replacements, or picks scale-down victims.
    fn reconcile(&mut self) {
        if self.shutting_down {
            return;
        }
        while self.live_ish() < self.desired {
            // A worker already draining is cheaper to revive than a fresh
            // job is to launch.
            let draining = self
                .workers
                .iter()
                .find(|(_, w)| w.state == WorkerState::Draining)
                .map(|(id, _)| *id);
            if let Some(wid) = draining {
                let entry = self.workers.get_mut(&wid).expect("draining worker present");
                entry.state = WorkerState::Live;
                continue;
            }
            if let Err(e) = self.spawn_worker() {
                // Backend refused; tick() retries on the next poll.
                eprintln!("taskforge: worker launch failed: {e}");
                break;
            }
        }
        while self.live_ish() > self.desired {
            // Newest launching worker first: it has no work to lose.
            let launching = self
                .workers
                .iter()
                .rev()
                .find(|(_, w)| w.state == WorkerState::Launching)
                .map(|(id, _)| *id);
            if let Some(wid) = launching {
                self.remove_worker(wid);
                continue;
            }
            // Then idle live workers, newest first.
            let idle = self
                .workers
                .iter()
                .rev()
                .find(|(_, w)| w.state == WorkerState::Live && w.tasks.is_empty())
                .map(|(id, _)| *id);
            if let Some(wid) = idle {
                let entry = self.workers.get_mut(&wid).expect("idle worker present");
                if let Some(conn) = &entry.conn {
                    let _ = conn.send(&Message::Control(Control::Shutdown));
                }
                entry.state = WorkerState::Stopping;
                entry.last_seen = Instant::now();
                continue;
            }
            // Busy workers drain: they finish what they hold, then stop.
            let busy = self
                .workers
                .iter()
                .rev()
                .find(|(_, w)| w.state == WorkerState::Live)
                .map(|(id, _)| *id);
            match busy {
                Some(wid) => {
                    self.workers.get_mut(&wid).expect("busy worker present").state =
                        WorkerState::Draining;
                }
                None => break,
            }
        }
    }

    /// Periodic maintenance: backend polling, heartbeat timeouts, launch
    /// grace, stuck-stop reaping, and roster reconciliation.
    fn tick(&mut self) {
        if self.shutting_down || self.last_poll.elapsed() < POLL_INTERVAL {
            return;
        }
        self.last_poll = Instant::now();

        let roster: Vec<(WorkerId, JobHandle, WorkerState)> = self
            .workers
            .iter()
            .map(|(id, w)| (*id, w.job.clone(), w.state))
            .collect();
        for (wid, job, state) in roster {
            if !self.workers.contains_key(&wid) {
                continue; // removed by an earlier failure in this tick
            }
            let terminal = match self.backend.poll_job(&job) {
                Ok(handle) if handle.state.is_terminal() => {
                    Some(handle.exit_detail.unwrap_or_else(|| "job ended".to_string()))
                }
                Ok(_) => None,
                Err(_) => Some("job unknown to backend".to_string()),
            };
            if let Some(detail) = terminal {
                if state == WorkerState::Stopping {
                    self.remove_worker(wid);
                } else {
                    self.fail_worker(wid, &detail);
                }
            }
        }

        let heartbeat_timeout = self.cfg.heartbeat_timeout;
        let launch_grace = heartbeat_timeout.max(MIN_LAUNCH_GRACE);
        let overdue: Vec<(WorkerId, WorkerState)> = self
            .workers
            .iter()
            .filter_map(|(id, w)| {
                let limit = match w.state {
                    WorkerState::Launching => launch_grace,
                    _ => heartbeat_timeout,
                };
                (w.last_seen.elapsed() > limit).then_some((*id, w.state))
            })
            .collect();
        for (wid, state) in overdue {
            if !self.workers.contains_key(&wid) {
                continue;
            }
            match state {
                WorkerState::Stopping => self.remove_worker(wid),
                WorkerState::Launching => self.fail_worker(wid, "worker never connected"),
                _ => self.fail_worker(wid, "heartbeat timeout"),
            }
        }

        self.reconcile();
        self.dispatch();
    }

    fn shutdown(&mut self, reply: Sender<PoolStats>) {
        self.shutting_down = true;

        for spec in std::mem::take(&mut self.queue) {
            self.stats.cancelled += 1;
            if let Some(waiter) = self.waiters.remove(&spec.id) {
                let _ = waiter.reply.send((waiter.index, Err(PoolError::PoolShutDown)));
            }
        }
        let in_flight: Vec<TaskId> = self.pending.ids().collect();
        for id in in_flight {
            self.pending.remove(id);
            self.stats.cancelled += 1;
            if let Some(waiter) = self.waiters.remove(&id) {
                let _ = waiter.reply.send((waiter.index, Err(PoolError::PoolShutDown)));
            }
        }
        self.waiters.clear();

        let ids: Vec<WorkerId> = self.workers.keys().copied().collect();
        for wid in ids {
            let entry = self.workers.remove(&wid).expect("roster entry");
            if let Some(conn) = &entry.conn {
                let _ = conn.send(&Message::Control(Control::Shutdown));
                conn.shutdown();
            }
            let _ = self.backend.terminate_job(&entry.job);
        }

        // Unblock the accept loop so its thread exits.
        self.accept_stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);

        let stats = self.snapshot();
        *self.final_stats.lock().unwrap() = Some(stats.clone());
        if std::env::var("TASKFORGE_STATS").as_deref() == Ok("1") {
            eprintln!(
                "taskforge stats: submitted={} dispatched={} completed={} \
                 failed_attempts={} resubmissions={} poisoned={} cancelled={}",
                stats.submitted,
                stats.dispatched,
                stats.completed,
                stats.failed_attempts,
                stats.resubmissions,
                stats.poisoned,
                stats.cancelled,
            );
        }
        let _ = reply.send(stats);
    }
}
