//! Built-in task functions and the benchmark workloads that use them.
//!
//! Function ids are pinned by registration order and exported as constants,
//! so masters can name functions without holding a registry. Arguments and
//! results are big-endian bytes throughout — the same numbers a worker on
//! another machine would decode.

pub mod es;
pub mod overhead;
pub mod pi;

use crate::registry::{FunctionId, Registry};

pub const ECHO: FunctionId = FunctionId::new(0);
pub const DOUBLE: FunctionId = FunctionId::new(1);
pub const SLEEP_MS: FunctionId = FunctionId::new(2);
pub const PI_COUNT: FunctionId = FunctionId::new(3);
pub const SPHERE_EVAL: FunctionId = FunctionId::new(4);
pub const FAIL_ALWAYS: FunctionId = FunctionId::new(5);
pub const SPHERE_EVAL_SLOW: FunctionId = FunctionId::new(6);

/// The standard worker function set. Registration order is part of the
/// protocol: it fixes the ids above, which masters bake into task frames.
pub fn builtin_registry() -> Registry {
    let mut reg = Registry::new();
    reg.register("echo", |args| Ok(args.to_vec())).unwrap();
    reg.register("double", |args| {
        Ok(encode_u64(decode_u64(args)?.wrapping_mul(2)))
    })
    .unwrap();
    reg.register("sleep_ms", |args| {
        let ms = decode_u64(args)?;
        std::thread::sleep(std::time::Duration::from_millis(ms));
        Ok(args.to_vec())
    })
    .unwrap();
    reg.register("pi_count", |args| {
        let (seed, samples) = pi::decode_pi_args(args)?;
        Ok(encode_u64(pi::count_inside(seed, samples)))
    })
    .unwrap();
    reg.register("sphere_eval", es::sphere_eval_task).unwrap();
    reg.register("fail_always", |_| Err("deliberate failure".to_string())).unwrap();
    reg.register("sphere_eval_slow", es::sphere_eval_slow_task).unwrap();
    reg
}

pub fn encode_u64(n: u64) -> Vec<u8> {
    n.to_be_bytes().to_vec()
}

pub fn decode_u64(bytes: &[u8]) -> Result<u64, String> {
    let arr: [u8; 8] = bytes.try_into().map_err(|_| format!("want 8 bytes, got {}", bytes.len()))?;
    Ok(u64::from_be_bytes(arr))
}

pub fn encode_f64(x: f64) -> Vec<u8> {
    x.to_be_bytes().to_vec()
}

pub fn decode_f64(bytes: &[u8]) -> Result<f64, String> {
    let arr: [u8; 8] = bytes.try_into().map_err(|_| format!("want 8 bytes, got {}", bytes.len()))?;
    Ok(f64::from_be_bytes(arr))
}
