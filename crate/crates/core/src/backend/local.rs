//! Local backend: each worker job is a real OS child process.

use std::collections::HashMap;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{Backend, BackendError, JobHandle, JobSpec, JobState};
use crate::task::WorkerId;

struct LocalJob {
    child: Child,
    worker: WorkerId,
    terminated: bool,
    /// Set once the child has been reaped.
    done: Option<(JobState, String)>,
}

impl LocalJob {
    /// Reaps the child if it has exited; no-op otherwise.
    fn refresh(&mut self) {
        if self.done.is_some() {
            return;
        }
        match self.child.try_wait() {
            Ok(Some(status)) => {
                let outcome = if self.terminated {
                    (JobState::Failed, "terminated".to_string())
                } else if status.success() {
                    (JobState::Finished, status.to_string())
                } else {
                    (JobState::Failed, status.to_string())
                };
                self.done = Some(outcome);
            }
            Ok(None) => {}
            Err(e) => self.done = Some((JobState::Failed, format!("wait failed: {e}"))),
        }
    }

    fn handle(&self, job_id: &str) -> JobHandle {
        match &self.done {
            Some((state, detail)) => JobHandle {
                job_id: job_id.to_string(),
                worker: self.worker,
                state: *state,
                exit_detail: Some(detail.clone()),
            },
            None => JobHandle {
                job_id: job_id.to_string(),
                worker: self.worker,
                state: JobState::Running,
                exit_detail: None,
            },
        }
    }
}

#[derive(Default)]
pub struct LocalBackend {
    jobs: Mutex<HashMap<String, LocalJob>>,
    next_id: AtomicU64,
}

impl LocalBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// OS pid of a running job, for diagnostics.
    pub fn pid_of(&self, job_id: &str) -> Option<u32> {
        self.jobs.lock().unwrap().get(job_id).map(|j| j.child.id())
    }
}

impl Backend for LocalBackend {
    fn submit_job(&self, spec: &JobSpec) -> Result<JobHandle, BackendError> {
        let worker = spec.validate()?;
        let child = Command::new(&spec.command[0])
            .args(&spec.command[1..])
            .envs(&spec.env)
            .stdin(Stdio::null())
            .spawn()
            .map_err(|e| BackendError::SpawnFailed(format!("{}: {e}", spec.command[0])))?;
        let job_id = format!("local-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let handle = JobHandle {
            job_id: job_id.clone(),
            worker,
            state: JobState::Running,
            exit_detail: None,
        };
        self.jobs
            .lock()
            .unwrap()
            .insert(job_id, LocalJob { child, worker, terminated: false, done: None });
        Ok(handle)
    }

    fn poll_job(&self, handle: &JobHandle) -> Result<JobHandle, BackendError> {
        let mut jobs = self.jobs.lock().unwrap();
        let job = jobs
            .get_mut(&handle.job_id)
            .ok_or_else(|| BackendError::UnknownJob(handle.job_id.clone()))?;
        job.refresh();
        Ok(job.handle(&handle.job_id))
    }

    fn terminate_job(&self, handle: &JobHandle) -> Result<(), BackendError> {
        let mut jobs = self.jobs.lock().unwrap();
        let job = jobs
            .get_mut(&handle.job_id)
            .ok_or_else(|| BackendError::UnknownJob(handle.job_id.clone()))?;
        job.refresh();
        if job.done.is_some() {
            return Ok(());
        }
        job.terminated = true;
        let _ = job.child.kill();
        let _ = job.child.wait();
        job.done = Some((JobState::Failed, "terminated".to_string()));
        Ok(())
    }

    fn list_jobs(&self) -> Vec<JobHandle> {
        let mut jobs = self.jobs.lock().unwrap();
        let mut out = Vec::new();
        for (id, job) in jobs.iter_mut() {
            job.refresh();
            if job.done.is_none() {
                out.push(job.handle(id));
            }
        }
        out
    }
}

impl Drop for LocalBackend {
    fn drop(&mut self) {
        let mut jobs = self.jobs.lock().unwrap();
        for job in jobs.values_mut() {
            job.refresh();
            if job.done.is_none() {
                let _ = job.child.kill();
                let _ = job.child.wait();
            }
        }
    }
}
