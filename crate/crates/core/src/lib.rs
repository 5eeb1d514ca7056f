//! TaskForge: master-worker distributed task execution.
//!
//! A master process owns a pool of job-backed workers, dispatches registered
//! functions to them over a framed TCP protocol, and survives worker failure
//! by tracking every in-flight task in a pending table and resubmitting work
//! that was lost with its worker. Companion pieces: distributed queues and
//! pipes for inter-task communication, a shared-storage manager for small
//! key-value state and stateful proxy objects, and pluggable execution
//! backends (real OS processes, or in-process simulated workers with
//! scriptable failures for deterministic tests).

pub mod backend;
pub mod channels;
pub mod cli;
pub mod manager;
pub mod pool;
pub mod registry;
pub mod task;
pub mod wire;
pub mod worker;
pub mod workloads;

pub use manager::{KvClient, Manager, ManagerError, ManagerOptions};
pub use pool::{Pool, PoolConfig, PoolError, PoolStats};
pub use registry::{FunctionId, Registry, RegistryError};
pub use task::{TaskId, TaskOutcome, TaskResult, TaskSpec, WorkerId};
