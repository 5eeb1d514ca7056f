//! Monte Carlo π, the determinism demo.
//!
//! The total sample budget splits into equal chunks; each chunk's generator
//! seed derives from the run seed and the chunk's position, so the estimate
//! depends only on (seed, samples, chunks) — never on which worker counted
//! which chunk, or on there being workers at all. The inside-counts are
//! integers, so even the reduction is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pool::{Pool, PoolError};

use super::{decode_u64, PI_COUNT};

/// Samples `samples` points in the unit square; counts those inside the
/// quarter circle.
pub fn count_inside(seed: u64, samples: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = 0;
    for _ in 0..samples {
        let x: f64 = rng.random();
        let y: f64 = rng.random();
        if x * x + y * y <= 1.0 {
            inside += 1;
        }
    }
    inside
}

/// Derives chunk `index`'s generator seed from the run seed. SplitMix64
/// finalizer: consecutive indices land far apart in seed space.
pub fn chunk_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Task argument layout: seed u64 ‖ samples u64, big-endian.
pub fn encode_pi_args(seed: u64, samples: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(&seed.to_be_bytes());
    out.extend_from_slice(&samples.to_be_bytes());
    out
}

pub fn decode_pi_args(bytes: &[u8]) -> Result<(u64, u64), String> {
    if bytes.len() != 16 {
        return Err(format!("want 16 bytes of pi args, got {}", bytes.len()));
    }
    Ok((
        u64::from_be_bytes(bytes[..8].try_into().unwrap()),
        u64::from_be_bytes(bytes[8..].try_into().unwrap()),
    ))
}

fn validate(samples: u64, chunks: u64) -> Result<(), PoolError> {
    if samples == 0 || chunks == 0 {
        return Err(PoolError::InvalidConfig("samples and chunks must be positive".into()));
    }
    if samples % chunks != 0 {
        return Err(PoolError::InvalidConfig(format!(
            "samples ({samples}) must divide evenly into chunks ({chunks})"
        )));
    }
    Ok(())
}

/// Estimates π on the pool: one task per chunk.
pub fn run_pi(pool: &Pool, seed: u64, samples: u64, chunks: u64) -> Result<f64, PoolError> {
    validate(samples, chunks)?;
    let per_chunk = samples / chunks;
    let inputs: Vec<Vec<u8>> =
        (0..chunks).map(|i| encode_pi_args(chunk_seed(seed, i), per_chunk)).collect();
    let outputs = pool.map(PI_COUNT, inputs)?;
    let mut inside = 0u64;
    for bytes in &outputs {
        inside += decode_u64(bytes)
            .map_err(|e| PoolError::TaskFailed { index: 0, message: e })?;
    }
    Ok(4.0 * inside as f64 / samples as f64)
}

/// The same estimate computed in-process — must match [`run_pi`] bit for
/// bit.
pub fn sequential_pi(seed: u64, samples: u64, chunks: u64) -> Result<f64, PoolError> {
    validate(samples, chunks)?;
    let per_chunk = samples / chunks;
    let inside: u64 = (0..chunks).map(|i| count_inside(chunk_seed(seed, i), per_chunk)).sum();
    Ok(4.0 * inside as f64 / samples as f64)
}
