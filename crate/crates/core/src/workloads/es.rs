//! Evolution strategies on the sphere objective.
//!
//! The master owns the parameter vector θ and a deterministic noise table.
//! Each iteration it draws `population` table indices, farms out reward
//! evaluations (workers rebuild the same table once, from the seed, and
//! cache it), then applies
//!
//! ```text
//! θ' = θ + (α / (N σ)) · Σᵢ rᵢ · noiseᵢ
//! ```
//!
//! with rewards mean-centered before the update. Centering matters: on the
//! sphere objective the raw form feeds the whole (large, negative) reward
//! level into the gradient estimate and diverges; centered, only the
//! differences between samples steer, and θ contracts toward the optimum.
//!
//! Everything downstream of the seed is deterministic, and reward reduction
//! happens in draw order, so a run's trajectory is bitwise identical no
//! matter how many workers evaluated it — that invariant is tested, not
//! assumed.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::pool::{Pool, PoolError};

use super::{decode_f64, encode_f64, SPHERE_EVAL, SPHERE_EVAL_SLOW};

/// Distinguishes the index-draw stream from the table stream, which both
/// derive from the run seed.
const INDEX_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// A fixed pool of standard-normal draws. Perturbations are `dim`-long
/// windows into it, named by their start index.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    values: Vec<f64>,
}

impl NoiseTable {
    /// Fills the table from a seeded generator; the same seed and size give
    /// the same table in any process.
    pub fn new(seed: u64, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..size).map(|_| rng.sample(StandardNormal)).collect();
        NoiseTable { values }
    }

    /// Test constructor: exactly these values.
    pub fn from_values(values: Vec<f64>) -> Self {
        NoiseTable { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The `dim`-long window starting at `index`.
    pub fn slice(&self, index: usize, dim: usize) -> Result<&[f64], String> {
        if index.checked_add(dim).is_none_or(|end| end > self.values.len()) {
            return Err(format!(
                "noise index {index}+{dim} out of range for table of {}",
                self.values.len()
            ));
        }
        Ok(&self.values[index..index + dim])
    }
}

/// Sphere objective: `-Σ xᵢ²`, maximized at the origin.
pub fn evaluate_sphere(x: &[f64]) -> f64 {
    -x.iter().map(|v| v * v).sum::<f64>()
}

/// Reward of θ perturbed by σ·noise. Master and worker both call this exact
/// function, which is what makes their arithmetic agree to the last bit.
pub fn sphere_reward(theta: &[f64], sigma: f64, noise: &[f64]) -> f64 {
    let perturbed: Vec<f64> =
        theta.iter().zip(noise).map(|(t, n)| t + sigma * n).collect();
    evaluate_sphere(&perturbed)
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One gradient step. `rewards[i]` weights the window `noises[i]`; the sum
/// runs in slice order. Callers center the rewards first — this function
/// applies the formula as given.
pub fn es_step(
    theta: &[f64],
    alpha: f64,
    sigma: f64,
    rewards: &[f64],
    noises: &[&[f64]],
) -> Vec<f64> {
    assert_eq!(rewards.len(), noises.len());
    let scale = alpha / (rewards.len() as f64 * sigma);
    theta
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let mut g = 0.0;
            for (r, noise) in rewards.iter().zip(noises) {
                g += r * noise[j];
            }
            t + scale * g
        })
        .collect()
}

/// Worker-side cache: tables are pure functions of (seed, size), so one per
/// process is enough no matter how many tasks reference it.
fn cached_table(seed: u64, size: usize) -> Arc<NoiseTable> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, usize), Arc<NoiseTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry((seed, size))
        .or_insert_with(|| Arc::new(NoiseTable::new(seed, size)))
        .clone()
}

/// Wire layout of one evaluation request: table_seed u64 ‖ table_size u64 ‖
/// sigma f64 ‖ noise_index u64 ‖ θ as f64s to the end. All big-endian.
pub fn encode_sphere_args(
    table_seed: u64,
    table_size: u64,
    sigma: f64,
    noise_index: u64,
    theta: &[f64],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + theta.len() * 8);
    out.extend_from_slice(&table_seed.to_be_bytes());
    out.extend_from_slice(&table_size.to_be_bytes());
    out.extend_from_slice(&sigma.to_be_bytes());
    out.extend_from_slice(&noise_index.to_be_bytes());
    for t in theta {
        out.extend_from_slice(&t.to_be_bytes());
    }
    out
}

pub struct SphereArgs {
    pub table_seed: u64,
    pub table_size: u64,
    pub sigma: f64,
    pub noise_index: u64,
    pub theta: Vec<f64>,
}

pub fn decode_sphere_args(bytes: &[u8]) -> Result<SphereArgs, String> {
    if bytes.len() < 32 || (bytes.len() - 32) % 8 != 0 {
        return Err(format!("bad sphere args length {}", bytes.len()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[i * 8..(i + 1) * 8].try_into().unwrap() };
    let theta = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SphereArgs {
        table_seed: u64::from_be_bytes(word(0)),
        table_size: u64::from_be_bytes(word(1)),
        sigma: f64::from_be_bytes(word(2)),
        noise_index: u64::from_be_bytes(word(3)),
        theta,
    })
}

/// The `sphere_eval` task body: decode, look up the (cached) table, reward.
pub(super) fn sphere_eval_task(args: &[u8]) -> Result<Vec<u8>, String> {
    let a = decode_sphere_args(args)?;
    let table = cached_table(a.table_seed, a.table_size as usize);
    let noise = table.slice(a.noise_index as usize, a.theta.len())?;
    Ok(encode_f64(sphere_reward(&a.theta, a.sigma, noise)))
}

/// The `sphere_eval_slow` task body: a busy-work prefix (`busy_ms` as u64,
/// big-endian) models an expensive rollout, then the same evaluation.
pub(super) fn sphere_eval_slow_task(args: &[u8]) -> Result<Vec<u8>, String> {
    if args.len() < 8 {
        return Err(format!("bad slow sphere args length {}", args.len()));
    }
    let busy_ms = u64::from_be_bytes(args[..8].try_into().unwrap());
    std::thread::sleep(Duration::from_millis(busy_ms));
    sphere_eval_task(&args[8..])
}

#[derive(Debug, Clone)]
pub struct EsConfig {
    pub dim: usize,
    pub population: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub seed: u64,
    pub iterations: usize,
    /// ‖θ₀‖; the start point spreads it evenly across dimensions.
    pub theta0_norm: f64,
    pub table_size: usize,
    /// Extra per-evaluation cost, modeling an expensive rollout. Whole
    /// milliseconds; zero (the default) keeps evaluations instant.
    pub busy_work: Duration,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            dim: 10,
            population: 64,
            sigma: 0.1,
            alpha: 0.1,
            seed: 42,
            iterations: 100,
            theta0_norm: 5.0,
            table_size: 1 << 18,
            busy_work: Duration::ZERO,
        }
    }
}

impl EsConfig {
    fn validate(&self) -> Result<(), PoolError> {
        if self.dim == 0 || self.population == 0 {
            return Err(PoolError::InvalidConfig("dim and population must be positive".into()));
        }
        if self.table_size < self.dim {
            return Err(PoolError::InvalidConfig(
                "noise table must hold at least one window".into(),
            ));
        }
        if !(self.sigma > 0.0) || !self.alpha.is_finite() {
            return Err(PoolError::InvalidConfig("sigma must be positive and alpha finite".into()));
        }
        if Duration::from_millis(self.busy_work.as_millis() as u64) != self.busy_work {
            return Err(PoolError::InvalidConfig(
                "busy_work must be a whole number of milliseconds".into(),
            ));
        }
        Ok(())
    }

    fn theta0(&self) -> Vec<f64> {
        vec![self.theta0_norm / (self.dim as f64).sqrt(); self.dim]
    }
}

/// One line of the optimization trajectory. Iteration 0 is the start point
/// (its own objective value); later rows carry the iteration's raw mean
/// population reward and the post-update ‖θ‖.
#[derive(Debug, Clone, PartialEq)]
pub struct EsRecord {
    pub iteration: usize,
    pub reward: f64,
    pub theta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsOutcome {
    pub theta: Vec<f64>,
    pub trajectory: Vec<EsRecord>,
}

/// The optimization loop, generic over where rewards come from. The
/// evaluator sees the samples in draw order and must return rewards in the
/// same order.
fn run_es_with(
    cfg: &EsConfig,
    mut evaluate: impl FnMut(&NoiseTable, &[f64], &[usize]) -> Result<Vec<f64>, PoolError>,
) -> Result<EsOutcome, PoolError> {
    cfg.validate()?;
    let table = NoiseTable::new(cfg.seed, cfg.table_size);
    let mut index_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INDEX_STREAM_SALT);
    let mut theta = cfg.theta0();
    let mut trajectory = Vec::with_capacity(cfg.iterations + 1);
    trajectory.push(EsRecord {
        iteration: 0,
        reward: evaluate_sphere(&theta),
        theta_norm: l2_norm(&theta),
    });

    for iteration in 1..=cfg.iterations {
        let indices: Vec<usize> = (0..cfg.population)
            .map(|_| index_rng.random_range(0..=cfg.table_size - cfg.dim))
            .collect();
        let rewards = evaluate(&table, &theta, &indices)?;
        debug_assert_eq!(rewards.len(), cfg.population);

        let mean = rewards.iter().sum::<f64>() / cfg.population as f64;
        let centered: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
        let noises: Vec<&[f64]> = indices
            .iter()
            .map(|&i| table.slice(i, cfg.dim).expect("draw range keeps windows in bounds"))
            .collect();
        theta = es_step(&theta, cfg.alpha, cfg.sigma, &centered, &noises);
        trajectory.push(EsRecord { iteration, reward: mean, theta_norm: l2_norm(&theta) });
    }
    Ok(EsOutcome { theta, trajectory })
}

/// Runs the loop with rewards evaluated on the pool's workers.
pub fn run_es(pool: &Pool, cfg: &EsConfig) -> Result<EsOutcome, PoolError> {
    let busy_ms = cfg.busy_work.as_millis() as u64;
    let function = if busy_ms == 0 { SPHERE_EVAL } else { SPHERE_EVAL_SLOW };
    run_es_with(cfg, |_, theta, indices| {
        let inputs: Vec<Vec<u8>> = indices
            .iter()
            .map(|&i| {
                let args =
                    encode_sphere_args(cfg.seed, cfg.table_size as u64, cfg.sigma, i as u64, theta);
                if busy_ms == 0 {
                    args
                } else {
                    let mut slow = busy_ms.to_be_bytes().to_vec();
                    slow.extend_from_slice(&args);
                    slow
                }
            })
            .collect();
        let outputs = pool.map(function, inputs)?;
        outputs
            .iter()
            .map(|bytes| {
                decode_f64(bytes)
                    .map_err(|e| PoolError::TaskFailed { index: 0, message: e })
            })
            .collect()
    })
}

/// Runs the identical loop with in-process evaluation — the determinism
/// oracle for [`run_es`].
pub fn run_es_sequential(cfg: &EsConfig) -> Result<EsOutcome, PoolError> {
    run_es_with(cfg, |table, theta, indices| {
        Ok(indices
            .iter()
            .map(|&i| {
                if !cfg.busy_work.is_zero() {
                    std::thread::sleep(cfg.busy_work);
                }
                let noise = table.slice(i, cfg.dim).expect("in-bounds draw");
                sphere_reward(theta, cfg.sigma, noise)
            })
            .collect())
    })
}
