//! Pending table: every dispatched-but-unresolved task, and who holds it.

use std::collections::HashMap;
use std::time::Instant;

use crate::task::{TaskId, TaskSpec, WorkerId};

#[derive(Debug, Clone)]
pub struct PendingEntry {
    pub worker: WorkerId,
    pub spec: TaskSpec,
    pub dispatched_at: Instant,
}

/// Map of in-flight tasks. A task id appears here from dispatch until its
/// result is delivered or its worker dies; the table is what makes worker
/// death recoverable, because it remembers exactly which specs were lost.
#[derive(Debug, Default)]
pub struct PendingTable {
    entries: HashMap<TaskId, PendingEntry>,
}

impl PendingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, worker: WorkerId, spec: TaskSpec) {
        let id = spec.id;
        let prev = self
            .entries
            .insert(id, PendingEntry { worker, spec, dispatched_at: Instant::now() });
        debug_assert!(prev.is_none(), "{id} dispatched twice without resolution");
    }

    pub fn remove(&mut self, id: TaskId) -> Option<PendingEntry> {
        self.entries.remove(&id)
    }

    pub fn contains(&self, id: TaskId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: TaskId) -> Option<&PendingEntry> {
        self.entries.get(&id)
    }

    /// Removes and returns everything the given worker held, ordered by task
    /// id so resubmission order is deterministic.
    pub fn take_worker(&mut self, worker: WorkerId) -> Vec<PendingEntry> {
        let ids: Vec<TaskId> = self
            .entries
            .iter()
            .filter(|(_, e)| e.worker == worker)
            .map(|(id, _)| *id)
            .collect();
        let mut taken: Vec<PendingEntry> =
            ids.into_iter().map(|id| self.entries.remove(&id).unwrap()).collect();
        taken.sort_by_key(|e| e.spec.id);
        taken
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.entries.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::FunctionId;

    fn spec(id: u64) -> TaskSpec {
        TaskSpec { id: TaskId::new(id), function: FunctionId::new(0), attempt: 0, args: vec![] }
    }

    #[test]
    fn insert_then_remove_roundtrips() {
        let mut table = PendingTable::new();
        table.insert(WorkerId::new(1), spec(10));
        assert!(table.contains(TaskId::new(10)));
        let entry = table.remove(TaskId::new(10)).unwrap();
        assert_eq!(entry.worker, WorkerId::new(1));
        assert_eq!(entry.spec.id, TaskId::new(10));
        assert!(table.is_empty());
        assert!(table.remove(TaskId::new(10)).is_none());
    }

    #[test]
    fn take_worker_returns_only_that_workers_tasks_in_id_order() {
        let mut table = PendingTable::new();
        table.insert(WorkerId::new(1), spec(5));
        table.insert(WorkerId::new(2), spec(3));
        table.insert(WorkerId::new(1), spec(2));
        table.insert(WorkerId::new(1), spec(9));
        let taken = table.take_worker(WorkerId::new(1));
        let ids: Vec<u64> = taken.iter().map(|e| e.spec.id.value()).collect();
        assert_eq!(ids, vec![2, 5, 9]);
        assert_eq!(table.len(), 1);
        assert!(table.contains(TaskId::new(3)));
    }

    #[test]
    fn take_worker_with_nothing_held_is_empty() {
        let mut table = PendingTable::new();
        table.insert(WorkerId::new(1), spec(1));
        assert!(table.take_worker(WorkerId::new(9)).is_empty());
        assert_eq!(table.len(), 1);
    }
}
