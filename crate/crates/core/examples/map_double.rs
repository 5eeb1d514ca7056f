//! Minimal library usage: a simulated pool mapping one builtin over inputs.
//!
//! Run with `cargo run --example map_double`.

use std::sync::Arc;

use taskforge::backend::sim::{SimBackend, SimScript};
use taskforge::workloads::{builtin_registry, DOUBLE};
use taskforge::{Pool, PoolConfig, PoolError};

fn main() -> Result<(), PoolError> {
    let registry = Arc::new(builtin_registry());
    let backend = Arc::new(SimBackend::new(registry, SimScript::none()));
    let pool = Pool::create(backend, PoolConfig::with_workers(4))?;

    let inputs: Vec<Vec<u8>> = (0u64..8).map(|i| i.to_be_bytes().to_vec()).collect();
    let doubled = pool.map(DOUBLE, inputs)?;
    assert_eq!(doubled[3], 6u64.to_be_bytes());

    let stats = pool.shutdown();
    println!("doubled {} values, {} dispatched", doubled.len(), stats.dispatched);
    Ok(())
}
