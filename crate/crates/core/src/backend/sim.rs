//! Simulated backend: worker threads instead of worker processes.
//!
//! Each submitted job runs the real worker loop on a thread in this process,
//! over a real socket to the master, so everything above the process
//! boundary — handshake, dispatch, results, heartbeats, failure handling —
//! exercises the same code as the local backend. A [`SimScript`] injects
//! failures at exact points: "the k-th submitted worker dies upon receiving
//! its (n+1)-th task". Scripts contain no randomness, so a given script
//! produces the same event sequence every run.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::{Backend, BackendError, JobHandle, JobSpec, JobState, ENV_HEARTBEAT_MS, ENV_MASTER_ADDR};
use crate::registry::Registry;
use crate::worker::{worker_loop, FailurePlan, SimControls, WorkerExit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimEvent {
    /// Worker at this submit index dies abruptly after completing
    /// `after_tasks` tasks, while holding the next one.
    Fail { worker_index: usize, after_tasks: usize },
    /// Same trigger, but the worker goes silent instead of dying: the
    /// process lives, heartbeats stop.
    Hang { worker_index: usize, after_tasks: usize },
}

/// Deterministic failure schedule, keyed by submission order (the first
/// submitted job is index 0, replacements keep counting up).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimScript {
    events: Vec<SimEvent>,
}

impl SimScript {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_fail(mut self, worker_index: usize, after_tasks: usize) -> Self {
        self.events.push(SimEvent::Fail { worker_index, after_tasks });
        self
    }

    pub fn with_hang(mut self, worker_index: usize, after_tasks: usize) -> Self {
        self.events.push(SimEvent::Hang { worker_index, after_tasks });
        self
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    fn plan_for(&self, index: usize) -> FailurePlan {
        let mut plan = FailurePlan::default();
        for event in &self.events {
            match *event {
                SimEvent::Fail { worker_index, after_tasks } if worker_index == index => {
                    plan.fail_after = Some(after_tasks);
                }
                SimEvent::Hang { worker_index, after_tasks } if worker_index == index => {
                    plan.hang_after = Some(after_tasks);
                }
                _ => {}
            }
        }
        plan
    }
}

struct SimJob {
    worker: crate::task::WorkerId,
    state: Arc<Mutex<(JobState, Option<String>)>>,
    controls: Arc<SimControls>,
}

pub struct SimBackend {
    registry: Arc<Registry>,
    script: SimScript,
    jobs: Mutex<HashMap<String, SimJob>>,
    submitted: AtomicUsize,
}

impl SimBackend {
    pub fn new(registry: Arc<Registry>, script: SimScript) -> Self {
        SimBackend {
            registry,
            script,
            jobs: Mutex::new(HashMap::new()),
            submitted: AtomicUsize::new(0),
        }
    }

    /// Number of jobs ever submitted (including dead ones).
    pub fn submissions(&self) -> usize {
        self.submitted.load(Ordering::SeqCst)
    }
}

/// Terminal state transitions are write-once: whoever ends the job first
/// (the thread exiting, or terminate_job) decides the exit detail.
fn finish(state: &Mutex<(JobState, Option<String>)>, to: JobState, detail: &str) {
    let mut guard = state.lock().unwrap();
    if !guard.0.is_terminal() {
        *guard = (to, Some(detail.to_string()));
    }
}

impl Backend for SimBackend {
    fn submit_job(&self, spec: &JobSpec) -> Result<JobHandle, BackendError> {
        let worker = spec.validate()?;
        let index = self.submitted.fetch_add(1, Ordering::SeqCst);
        let job_id = format!("sim-{index}");
        let plan = self.script.plan_for(index);
        let master_addr = spec.env.get(ENV_MASTER_ADDR).cloned().expect("validated");
        let heartbeat = spec
            .env
            .get(ENV_HEARTBEAT_MS)
            .and_then(|v| v.parse::<u64>().ok())
            .map(Duration::from_millis)
            .unwrap_or(crate::worker::DEFAULT_HEARTBEAT_INTERVAL);

        let state = Arc::new(Mutex::new((JobState::Running, None::<String>)));
        let controls = Arc::new(SimControls::default());
        let registry = Arc::clone(&self.registry);
        let thread_state = Arc::clone(&state);
        let thread_controls = Arc::clone(&controls);
        thread::Builder::new()
            .name(job_id.clone())
            .spawn(move || {
                let exit = worker_loop(
                    &master_addr,
                    worker,
                    &registry,
                    heartbeat,
                    plan,
                    Some(&thread_controls),
                );
                match exit {
                    WorkerExit::CleanShutdown => {
                        finish(&thread_state, JobState::Finished, "clean shutdown")
                    }
                    WorkerExit::ScriptedFailure => {
                        finish(&thread_state, JobState::Failed, "scripted failure")
                    }
                    WorkerExit::Terminated => {
                        finish(&thread_state, JobState::Failed, "terminated")
                    }
                    WorkerExit::ConnectFailed(d) => {
                        finish(&thread_state, JobState::Failed, &format!("connect failed: {d}"))
                    }
                    WorkerExit::ConnectionLost(d) => {
                        finish(&thread_state, JobState::Failed, &format!("connection lost: {d}"))
                    }
                    WorkerExit::ProtocolError(d) => {
                        finish(&thread_state, JobState::Failed, &format!("protocol error: {d}"))
                    }
                }
            })
            .map_err(|e| BackendError::SpawnFailed(format!("spawn worker thread: {e}")))?;

        self.jobs
            .lock()
            .unwrap()
            .insert(job_id.clone(), SimJob { worker, state, controls });
        Ok(JobHandle { job_id, worker, state: JobState::Running, exit_detail: None })
    }

    fn poll_job(&self, handle: &JobHandle) -> Result<JobHandle, BackendError> {
        let jobs = self.jobs.lock().unwrap();
        let job = jobs
            .get(&handle.job_id)
            .ok_or_else(|| BackendError::UnknownJob(handle.job_id.clone()))?;
        let (state, detail) = job.state.lock().unwrap().clone();
        Ok(JobHandle {
            job_id: handle.job_id.clone(),
            worker: job.worker,
            state,
            exit_detail: detail,
        })
    }

    fn terminate_job(&self, handle: &JobHandle) -> Result<(), BackendError> {
        let jobs = self.jobs.lock().unwrap();
        let job = jobs
            .get(&handle.job_id)
            .ok_or_else(|| BackendError::UnknownJob(handle.job_id.clone()))?;
        if job.state.lock().unwrap().0.is_terminal() {
            return Ok(());
        }
        job.controls.stop();
        finish(&job.state, JobState::Failed, "terminated");
        Ok(())
    }

    fn list_jobs(&self) -> Vec<JobHandle> {
        let jobs = self.jobs.lock().unwrap();
        let mut out = Vec::new();
        for (id, job) in jobs.iter() {
            let (state, detail) = job.state.lock().unwrap().clone();
            if !state.is_terminal() {
                out.push(JobHandle {
                    job_id: id.clone(),
                    worker: job.worker,
                    state,
                    exit_detail: detail,
                });
            }
        }
        out
    }
}
