//! Core task vocabulary shared by the master, the workers, and the wire.
//!
//! A task is a registered function applied to one opaque argument blob. The
//! master assigns each submission a process-unique [`TaskId`]; a task that is
//! resubmitted after a worker failure keeps its id and bumps `attempt`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

/// Unique id for one submitted task. Ids are assigned by the master,
/// start at 1, and are never reused within a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(u64);

impl TaskId {
    pub const fn new(raw: u64) -> Self {
        TaskId(raw)
    }

    pub const fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task-{}", self.0)
    }
}

/// Identity of one worker slot. Assigned by the master when it submits the
/// backing job; a replacement worker gets a fresh id, never a reused one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkerId(u32);

impl WorkerId {
    pub const fn new(raw: u32) -> Self {
        WorkerId(raw)
    }

    pub const fn value(self) -> u32 {
        self.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "worker-{}", self.0)
    }
}

/// Everything a worker needs to run one task attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub function: crate::registry::FunctionId,
    /// 0 for the first dispatch, incremented on each resubmission.
    pub attempt: u32,
    pub args: Vec<u8>,
}

/// What came back from executing a task.
///
/// `TaskError` is a deterministic failure reported by the task function
/// itself; it is delivered to the caller and never retried. Worker death is
/// not an outcome — those tasks are resubmitted and eventually either
/// complete or poison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskOutcome {
    Success(Vec<u8>),
    TaskError(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskResult {
    pub id: TaskId,
    pub worker: WorkerId,
    pub outcome: TaskOutcome,
}

impl TaskResult {
    /// Unwraps the success payload, or the task's own error message.
    pub fn into_output(self) -> Result<Vec<u8>, String> {
        match self.outcome {
            TaskOutcome::Success(bytes) => Ok(bytes),
            TaskOutcome::TaskError(msg) => Err(msg),
        }
    }
}

/// Thread-safe source of process-unique task ids. A fresh source issues
/// 1, 2, 3, ... with no duplicates under concurrent callers.
#[derive(Debug)]
pub struct TaskIdSource {
    next: AtomicU64,
}

impl TaskIdSource {
    pub const fn new() -> Self {
        TaskIdSource { next: AtomicU64::new(1) }
    }

    pub fn issue(&self) -> TaskId {
        TaskId(self.next.fetch_add(1, Ordering::Relaxed))
    }
}

impl Default for TaskIdSource {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::Arc;

    #[test]
    fn fresh_source_starts_at_one() {
        let ids = TaskIdSource::new();
        assert_eq!(ids.issue(), TaskId::new(1));
    }

    #[test]
    fn three_issues_are_one_two_three() {
        let ids = TaskIdSource::new();
        let got: Vec<u64> = (0..3).map(|_| ids.issue().value()).collect();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn thousand_concurrent_issues_are_distinct() {
        let ids = Arc::new(TaskIdSource::new());
        let mut handles = Vec::new();
        for _ in 0..10 {
            let ids = Arc::clone(&ids);
            handles.push(std::thread::spawn(move || {
                (0..100).map(|_| ids.issue().value()).collect::<Vec<_>>()
            }));
        }
        let mut seen = HashSet::new();
        for h in handles {
            for id in h.join().unwrap() {
                assert!(seen.insert(id), "duplicate task id {id}");
            }
        }
        assert_eq!(seen.len(), 1000);
        assert!(seen.iter().all(|&id| (1..=1000).contains(&id)));
    }

    #[test]
    fn task_result_into_output() {
        let ok = TaskResult {
            id: TaskId::new(1),
            worker: WorkerId::new(0),
            outcome: TaskOutcome::Success(b"out".to_vec()),
        };
        assert_eq!(ok.into_output().unwrap(), b"out");

        let err = TaskResult {
            id: TaskId::new(2),
            worker: WorkerId::new(0),
            outcome: TaskOutcome::TaskError("boom".into()),
        };
        assert_eq!(err.into_output().unwrap_err(), "boom");
    }
}
