//! Framework overhead measurement.
//!
//! Workers run timer-wait tasks of a fixed duration, sized so that a perfect
//! framework would finish each batch in exactly `target_total` wall-clock
//! time (`workers × target/duration` tasks). Measured time over ideal time
//! is the overhead ratio; the task duration sweep shows where dispatch cost
//! stops hiding behind task runtime.

use std::time::{Duration, Instant};

use crate::pool::{Pool, PoolError};

use super::{encode_u64, SLEEP_MS};

#[derive(Debug, Clone)]
pub struct OverheadConfig {
    /// Length of each timer task. Whole milliseconds.
    pub task_duration: Duration,
    /// How many workers the batch is sized for. The pool should be running
    /// exactly this many.
    pub workers: usize,
    /// Ideal wall-clock time per batch; must divide evenly by the task
    /// duration.
    pub target_total: Duration,
    /// Measured batches (after one unmeasured warmup batch).
    pub repetitions: usize,
}

impl Default for OverheadConfig {
    fn default() -> Self {
        OverheadConfig {
            task_duration: Duration::from_millis(100),
            workers: 5,
            target_total: Duration::from_secs(1),
            repetitions: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OverheadReport {
    pub task_duration: Duration,
    pub workers: usize,
    /// Tasks per batch.
    pub batch: usize,
    /// What a zero-overhead framework would take per batch.
    pub ideal: Duration,
    /// Per-repetition wall-clock times.
    pub measured: Vec<Duration>,
    pub median: Duration,
    pub mean: Duration,
    /// median / ideal.
    pub ratio: f64,
}

fn median_of(sorted: &[Duration]) -> Duration {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

pub fn run_overhead(pool: &Pool, cfg: &OverheadConfig) -> Result<OverheadReport, PoolError> {
    if cfg.workers == 0 || cfg.repetitions == 0 {
        return Err(PoolError::InvalidConfig("workers and repetitions must be positive".into()));
    }
    let task_ms = cfg.task_duration.as_millis() as u64;
    if task_ms == 0 || cfg.task_duration != Duration::from_millis(task_ms) {
        return Err(PoolError::InvalidConfig(
            "task_duration must be a whole number of milliseconds, at least 1".into(),
        ));
    }
    let target_ns = cfg.target_total.as_nanos();
    let task_ns = cfg.task_duration.as_nanos();
    if target_ns == 0 || target_ns % task_ns != 0 {
        return Err(PoolError::InvalidConfig(format!(
            "target_total ({:?}) must be a positive multiple of task_duration ({:?})",
            cfg.target_total, cfg.task_duration
        )));
    }
    let per_worker = (target_ns / task_ns) as usize;
    let batch = cfg.workers * per_worker;
    let ideal = cfg.target_total;
    let args: Vec<Vec<u8>> = std::iter::repeat(encode_u64(task_ms)).take(batch).collect();

    // Warmup batch: absorbs worker spin-up and first-dispatch costs.
    pool.map(SLEEP_MS, args.clone())?;

    let mut measured = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        pool.map(SLEEP_MS, args.clone())?;
        measured.push(start.elapsed());
    }

    let mut sorted = measured.clone();
    sorted.sort();
    let median = median_of(&sorted);
    let mean = measured.iter().sum::<Duration>() / measured.len() as u32;
    let ratio = median.as_secs_f64() / ideal.as_secs_f64();

    Ok(OverheadReport {
        task_duration: cfg.task_duration,
        workers: cfg.workers,
        batch,
        ideal,
        measured,
        median,
        mean,
        ratio,
    })
}
