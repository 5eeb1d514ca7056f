//! Execution backends: how worker jobs get started, watched, and stopped.
//!
//! The pool never spawns processes itself; it describes a job and hands it to
//! a [`Backend`]. [`local::LocalBackend`] runs real OS processes.
//! [`sim::SimBackend`] runs worker threads in-process over real sockets, with
//! scriptable failures, and exists so fault-handling paths can be tested
//! deterministically. Anything cluster-shaped (a job scheduler API) slots in
//! as a third implementation of the same four calls.

pub mod local;
pub mod sim;

use std::collections::BTreeMap;

use crate::task::WorkerId;

/// Environment variable telling a worker where its master listens.
pub const ENV_MASTER_ADDR: &str = "TASKFORGE_MASTER_ADDR";
/// Environment variable carrying the worker's assigned id.
pub const ENV_WORKER_ID: &str = "TASKFORGE_WORKER_ID";
/// Optional: heartbeat interval in milliseconds (default 1000).
pub const ENV_HEARTBEAT_MS: &str = "TASKFORGE_HEARTBEAT_MS";
/// Optional: set to 1 to dump pool statistics to stderr on shutdown.
pub const ENV_STATS: &str = "TASKFORGE_STATS";

/// Description of one worker job, backend-agnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    /// Container image for cluster backends; informational elsewhere.
    pub image: String,
    pub command: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub cpu_request: f64,
}

impl JobSpec {
    pub fn new(command: Vec<String>) -> Self {
        JobSpec { image: String::new(), command, env: BTreeMap::new(), cpu_request: 1.0 }
    }

    pub fn with_env(mut self, key: &str, value: &str) -> Self {
        self.env.insert(key.to_string(), value.to_string());
        self
    }

    pub fn worker_id(&self) -> Option<WorkerId> {
        self.env.get(ENV_WORKER_ID)?.parse().ok().map(WorkerId::new)
    }

    /// Every submission must name a program and address a master.
    pub fn validate(&self) -> Result<WorkerId, BackendError> {
        if self.command.is_empty() {
            return Err(BackendError::SpawnFailed("job command is empty".into()));
        }
        if !self.env.contains_key(ENV_MASTER_ADDR) {
            return Err(BackendError::SpawnFailed(format!(
                "job env is missing {ENV_MASTER_ADDR}"
            )));
        }
        self.worker_id().ok_or_else(|| {
            BackendError::SpawnFailed(format!("job env is missing a valid {ENV_WORKER_ID}"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Pending,
    Running,
    Finished,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Finished | JobState::Failed)
    }
}

#[derive(Debug, Clone)]
pub struct JobHandle {
    pub job_id: String,
    pub worker: WorkerId,
    pub state: JobState,
    pub exit_detail: Option<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("job spawn failed: {0}")]
    SpawnFailed(String),
    #[error("unknown job {0:?}")]
    UnknownJob(String),
}

/// The four calls a pool needs from an execution substrate.
pub trait Backend: Send + Sync {
    /// Starts one worker job. The returned handle is `Pending` or `Running`.
    fn submit_job(&self, spec: &JobSpec) -> Result<JobHandle, BackendError>;
    /// Refreshes a handle's state and exit detail.
    fn poll_job(&self, handle: &JobHandle) -> Result<JobHandle, BackendError>;
    /// Stops a job. Idempotent; terminal jobs are left as they ended.
    fn terminate_job(&self, handle: &JobHandle) -> Result<(), BackendError>;
    /// All jobs this backend currently considers non-terminal.
    fn list_jobs(&self) -> Vec<JobHandle>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_empty_command() {
        let spec = JobSpec::new(vec![])
            .with_env(ENV_MASTER_ADDR, "127.0.0.1:1")
            .with_env(ENV_WORKER_ID, "0");
        assert!(matches!(spec.validate(), Err(BackendError::SpawnFailed(_))));
    }

    #[test]
    fn validate_requires_master_addr() {
        let spec = JobSpec::new(vec!["true".into()]).with_env(ENV_WORKER_ID, "0");
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains(ENV_MASTER_ADDR), "{err}");
    }

    #[test]
    fn validate_requires_worker_id() {
        let spec = JobSpec::new(vec!["true".into()]).with_env(ENV_MASTER_ADDR, "127.0.0.1:1");
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains(ENV_WORKER_ID), "{err}");
    }

    #[test]
    fn validate_passes_complete_spec() {
        let spec = JobSpec::new(vec!["true".into()])
            .with_env(ENV_MASTER_ADDR, "127.0.0.1:1")
            .with_env(ENV_WORKER_ID, "7");
        assert_eq!(spec.validate().unwrap(), WorkerId::new(7));
    }
}
