//! C ABI over the pool and the shared-storage manager.
//!
//! Conventions: every handle type is opaque; functions return [`TfStatus`]
//! and write results through out-pointers; on any non-OK status the calling
//! thread can read a message from [`tf_last_error`]. Buffers handed to the
//! caller are freed with the matching `tf_*_free`, never with `free(3)`.
//! Panics never cross the boundary — they become `TF_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use taskforge::backend::local::LocalBackend;
use taskforge::backend::sim::{SimBackend, SimScript};
use taskforge::manager::{KvClient, Manager, ManagerError};
use taskforge::pool::{Pool, PoolConfig, PoolError};
use taskforge::registry::Registry;
use taskforge::workloads::builtin_registry;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    /// Success.
    Ok = 0,
    /// A pointer was null, a string was not UTF-8, or a value was out of range.
    InvalidArgument = 1,
    /// The pool reported a failure (workers unavailable, task poisoned, ...).
    PoolFailed = 2,
    /// Could not reach (or lost) the remote endpoint.
    ConnectFailed = 3,
    /// The requested key does not exist.
    KeyNotFound = 4,
    /// A proxy object rejected the request.
    ProxyFailed = 5,
    /// The handle was already shut down.
    ShutDown = 6,
    /// An internal invariant failed; details via tf_last_error.
    Internal = 7,
}

/// Counters describing a pool's lifetime so far.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TfPoolStats {
    pub submitted: u64,
    pub dispatched: u64,
    pub completed: u64,
    pub failed_attempts: u64,
    pub resubmissions: u64,
    pub poisoned: u64,
    pub cancelled: u64,
    pub active_workers: u64,
}

/// A fault-tolerant worker pool.
pub struct TfPool {
    pool: Pool,
    registry: Registry,
}

/// A running shared-storage manager.
pub struct TfManager {
    manager: Manager,
    addr: CString,
}

/// A client connection to a manager.
pub struct TfKv {
    client: KvClient,
}

/// An ordered list of byte buffers (map results).
pub struct TfBufList {
    items: Vec<Vec<u8>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes stripped");
    });
}

fn fail(status: TfStatus, msg: &str) -> TfStatus {
    set_error(msg);
    status
}

fn pool_error(e: &PoolError) -> TfStatus {
    let status = match e {
        PoolError::InvalidConfig(_) | PoolError::ArgsTooLarge { .. } | PoolError::UnknownWorker(_) => {
            TfStatus::InvalidArgument
        }
        PoolError::PoolShutDown => TfStatus::ShutDown,
        PoolError::Backend(_) => TfStatus::Internal,
        _ => TfStatus::PoolFailed,
    };
    fail(status, &e.to_string())
}

fn manager_error(e: &ManagerError) -> TfStatus {
    let status = match e {
        ManagerError::KeyNotFound(_) => TfStatus::KeyNotFound,
        ManagerError::BindFailed(_) | ManagerError::ConnectionLost(_) => TfStatus::ConnectFailed,
        ManagerError::Protocol(_) => TfStatus::Internal,
        _ => TfStatus::ProxyFailed,
    };
    fail(status, &e.to_string())
}

/// Shields the ABI from unwinding; a panic inside `body` becomes TF_INTERNAL.
fn guarded(body: impl FnOnce() -> TfStatus) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(TfStatus::Internal, &format!("internal panic: {msg}"))
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, TfStatus> {
    if ptr.is_null() {
        return Err(fail(TfStatus::InvalidArgument, &format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(TfStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

macro_rules! require_mut {
    ($ptr:expr, $what:literal) => {
        match unsafe { $ptr.as_mut() } {
            Some(r) => r,
            None => return fail(TfStatus::InvalidArgument, concat!($what, " is null")),
        }
    };
}

macro_rules! require_ref {
    ($ptr:expr, $what:literal) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => return fail(TfStatus::InvalidArgument, concat!($what, " is null")),
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn tf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a pool of `workers` workers running the built-in function set.
///
/// With `simulated` true, workers are in-process threads and `worker_exe`
/// is ignored. Otherwise each worker is an OS process: `worker_exe` names
/// the binary to run (it receives a `worker` argument), or null to re-run
/// the calling executable — only correct when that executable dispatches a
/// `worker` argument to the worker entry point.
///
/// # Safety
/// `worker_exe` must be null or a valid NUL-terminated string; `out` must
/// point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn tf_pool_create(
    workers: u32,
    simulated: bool,
    worker_exe: *const c_char,
    out: *mut *mut TfPool,
) -> TfStatus {
    let out = require_mut!(out, "out");
    guarded(|| {
        let mut cfg = PoolConfig::with_workers(workers as usize);
        cfg.batch_size = 8;
        let registry = builtin_registry();
        let created = if simulated {
            let backend = Arc::new(SimBackend::new(Arc::new(builtin_registry()), SimScript::none()));
            Pool::create(backend, cfg)
        } else {
            if !worker_exe.is_null() {
                let exe = match unsafe { read_str(worker_exe, "worker_exe") } {
                    Ok(s) => s,
                    Err(status) => return status,
                };
                cfg.worker_command = vec![exe.to_string(), "worker".to_string()];
            }
            Pool::create(Arc::new(LocalBackend::new()), cfg)
        };
        match created {
            Ok(pool) => {
                *out = Box::into_raw(Box::new(TfPool { pool, registry }));
                TfStatus::Ok
            }
            Err(e) => pool_error(&e),
        }
    })
}

/// Applies the named built-in function to `count` argument buffers and
/// returns the results in input order.
///
/// `args[i]` points at `arg_lens[i]` bytes; a null `args[i]` is only legal
/// when `arg_lens[i]` is zero. On success `*out` owns the result list —
/// free it with [`tf_buflist_free`].
///
/// # Safety
/// `args` and `arg_lens` must point to `count` readable elements, and each
/// non-null `args[i]` to `arg_lens[i]` readable bytes; `out` must point to
/// writable storage.
#[no_mangle]
pub unsafe extern "C" fn tf_pool_map(
    handle: *mut TfPool,
    function: *const c_char,
    args: *const *const u8,
    arg_lens: *const usize,
    count: usize,
    out: *mut *mut TfBufList,
) -> TfStatus {
    let handle = require_mut!(handle, "pool");
    let out = require_mut!(out, "out");
    if count > 0 && (args.is_null() || arg_lens.is_null()) {
        return fail(TfStatus::InvalidArgument, "args/arg_lens are null");
    }
    guarded(|| {
        let name = match unsafe { read_str(function, "function") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let Ok(id) = handle.registry.id_of(name) else {
            return fail(TfStatus::InvalidArgument, &format!("unknown function {name:?}"));
        };
        let mut inputs = Vec::with_capacity(count);
        for i in 0..count {
            let ptr = unsafe { *args.add(i) };
            let len = unsafe { *arg_lens.add(i) };
            if ptr.is_null() && len != 0 {
                return fail(TfStatus::InvalidArgument, &format!("args[{i}] is null"));
            }
            let bytes = if len == 0 {
                Vec::new()
            } else {
                unsafe { std::slice::from_raw_parts(ptr, len) }.to_vec()
            };
            inputs.push(bytes);
        }
        match handle.pool.map(id, inputs) {
            Ok(items) => {
                *out = Box::into_raw(Box::new(TfBufList { items }));
                TfStatus::Ok
            }
            Err(e) => pool_error(&e),
        }
    })
}

/// Changes the target worker count of a live pool.
///
/// # Safety
/// `handle` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn tf_pool_scale_to(handle: *mut TfPool, workers: u32) -> TfStatus {
    let handle = require_mut!(handle, "pool");
    guarded(|| match handle.pool.scale_to(workers as usize) {
        Ok(()) => TfStatus::Ok,
        Err(e) => pool_error(&e),
    })
}

/// Snapshots the pool's counters into `*out`.
///
/// # Safety
/// `out` must point to writable storage for one `TfPoolStats`.
#[no_mangle]
pub unsafe extern "C" fn tf_pool_stats(handle: *const TfPool, out: *mut TfPoolStats) -> TfStatus {
    let handle = require_ref!(handle, "pool");
    let out = require_mut!(out, "out");
    guarded(|| {
        let s = handle.pool.stats();
        *out = TfPoolStats {
            submitted: s.submitted,
            dispatched: s.dispatched,
            completed: s.completed,
            failed_attempts: s.failed_attempts,
            resubmissions: s.resubmissions,
            poisoned: s.poisoned,
            cancelled: s.cancelled,
            active_workers: s.active_workers,
        };
        TfStatus::Ok
    })
}

/// Stops all workers and refuses new work. Idempotent.
///
/// # Safety
/// `handle` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn tf_pool_shutdown(handle: *mut TfPool) -> TfStatus {
    let handle = require_mut!(handle, "pool");
    guarded(|| {
        handle.pool.shutdown();
        TfStatus::Ok
    })
}

/// Releases the handle (shutting the pool down first if needed). Null is a
/// no-op.
///
/// # Safety
/// `handle` must be null or a live pool handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_pool_free(handle: *mut TfPool) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Number of buffers in the list.
///
/// # Safety
/// `list` must be null or a live list handle.
#[no_mangle]
pub unsafe extern "C" fn tf_buflist_len(list: *const TfBufList) -> usize {
    unsafe { list.as_ref() }.map_or(0, |l| l.items.len())
}

/// Borrows buffer `index`; writes its length to `*len_out`. Returns null if
/// `index` is out of range. The pointer stays valid until the list is freed.
///
/// # Safety
/// `len_out` must be null or point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn tf_buflist_get(
    list: *const TfBufList,
    index: usize,
    len_out: *mut usize,
) -> *const u8 {
    let Some(list) = (unsafe { list.as_ref() }) else {
        return std::ptr::null();
    };
    let Some(item) = list.items.get(index) else {
        return std::ptr::null();
    };
    if let Some(len) = unsafe { len_out.as_mut() } {
        *len = item.len();
    }
    item.as_ptr()
}

/// Releases the list and every buffer in it. Null is a no-op.
///
/// # Safety
/// `list` must be null or a live list handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_buflist_free(list: *mut TfBufList) {
    if !list.is_null() {
        drop(unsafe { Box::from_raw(list) });
    }
}

/// Starts a manager bound to `bind_addr` (e.g. "127.0.0.1:0").
///
/// # Safety
/// `bind_addr` must be a valid NUL-terminated string; `out` must point to
/// writable storage.
#[no_mangle]
pub unsafe extern "C" fn tf_manager_start(
    bind_addr: *const c_char,
    out: *mut *mut TfManager,
) -> TfStatus {
    let out = require_mut!(out, "out");
    guarded(|| {
        let addr = match unsafe { read_str(bind_addr, "bind_addr") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match Manager::start(addr) {
            Ok(manager) => {
                let addr = CString::new(manager.addr().to_string()).expect("no NUL in addr");
                *out = Box::into_raw(Box::new(TfManager { manager, addr }));
                TfStatus::Ok
            }
            Err(e) => manager_error(&e),
        }
    })
}

/// The manager's bound address ("host:port"); valid while the handle lives.
///
/// # Safety
/// `handle` must be null or a live manager handle.
#[no_mangle]
pub unsafe extern "C" fn tf_manager_addr(handle: *const TfManager) -> *const c_char {
    unsafe { handle.as_ref() }.map_or(std::ptr::null(), |m| m.addr.as_ptr())
}

/// Disconnects clients and stops the manager. Idempotent.
///
/// # Safety
/// `handle` must be null or a live manager handle.
#[no_mangle]
pub unsafe extern "C" fn tf_manager_stop(handle: *mut TfManager) -> TfStatus {
    let handle = require_mut!(handle, "manager");
    guarded(|| {
        handle.manager.stop();
        TfStatus::Ok
    })
}

/// Releases the handle (stopping the manager first if needed). Null is a
/// no-op.
///
/// # Safety
/// `handle` must be null or a live manager handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_manager_free(handle: *mut TfManager) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Connects a key-value client to a manager at `addr`.
///
/// # Safety
/// `addr` must be a valid NUL-terminated string; `out` must point to
/// writable storage.
#[no_mangle]
pub unsafe extern "C" fn tf_kv_connect(addr: *const c_char, out: *mut *mut TfKv) -> TfStatus {
    let out = require_mut!(out, "out");
    guarded(|| {
        let addr = match unsafe { read_str(addr, "addr") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match KvClient::connect(addr) {
            Ok(client) => {
                *out = Box::into_raw(Box::new(TfKv { client }));
                TfStatus::Ok
            }
            Err(e) => manager_error(&e),
        }
    })
}

/// Stores `value` under `key`; writes the key's new version (1 on first
/// write) to `*version_out` unless it is null.
///
/// # Safety
/// `key` must be a valid NUL-terminated string; `value` must point to `len`
/// readable bytes (null only when `len` is zero); `version_out` must be
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn tf_kv_put(
    handle: *mut TfKv,
    key: *const c_char,
    value: *const u8,
    len: usize,
    version_out: *mut u64,
) -> TfStatus {
    let handle = require_mut!(handle, "kv");
    if value.is_null() && len != 0 {
        return fail(TfStatus::InvalidArgument, "value is null");
    }
    guarded(|| {
        let key = match unsafe { read_str(key, "key") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let bytes =
            if len == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(value, len) } };
        match handle.client.put(key, bytes) {
            Ok(version) => {
                if let Some(v) = unsafe { version_out.as_mut() } {
                    *v = version;
                }
                TfStatus::Ok
            }
            Err(e) => manager_error(&e),
        }
    })
}

/// Fetches `key`. On success `*value_out` owns `*len_out` bytes — release
/// with [`tf_bytes_free`] — and `*version_out` (if non-null) receives the
/// key's version.
///
/// # Safety
/// `key` must be a valid NUL-terminated string; `value_out` and `len_out`
/// must point to writable storage; `version_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn tf_kv_get(
    handle: *mut TfKv,
    key: *const c_char,
    value_out: *mut *mut u8,
    len_out: *mut usize,
    version_out: *mut u64,
) -> TfStatus {
    let handle = require_mut!(handle, "kv");
    let value_out = require_mut!(value_out, "value_out");
    let len_out = require_mut!(len_out, "len_out");
    guarded(|| {
        let key = match unsafe { read_str(key, "key") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match handle.client.get(key) {
            Ok((bytes, version)) => {
                let boxed: Box<[u8]> = bytes.into_boxed_slice();
                *len_out = boxed.len();
                *value_out = Box::into_raw(boxed) as *mut u8;
                if let Some(v) = unsafe { version_out.as_mut() } {
                    *v = version;
                }
                TfStatus::Ok
            }
            Err(e) => manager_error(&e),
        }
    })
}

/// Closes the client connection. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a live client handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_kv_free(handle: *mut TfKv) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Releases a buffer returned by [`tf_kv_get`]. `len` must be the length
/// that call reported. Null is a no-op.
///
/// # Safety
/// `ptr` must be null or exactly the pointer returned by [`tf_kv_get`] with
/// its reported length, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn tf_bytes_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn be(n: u64) -> Vec<u8> {
        n.to_be_bytes().to_vec()
    }

    fn make_sim_pool(workers: u32) -> *mut TfPool {
        let mut pool: *mut TfPool = std::ptr::null_mut();
        let status = unsafe { tf_pool_create(workers, true, std::ptr::null(), &mut pool) };
        assert_eq!(status, TfStatus::Ok);
        assert!(!pool.is_null());
        pool
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(tf_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn version_is_a_static_string() {
        let v = unsafe { CStr::from_ptr(tf_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_handles_are_rejected_not_crashed() {
        let mut stats = TfPoolStats::default();
        assert_eq!(
            unsafe { tf_pool_stats(std::ptr::null(), &mut stats) },
            TfStatus::InvalidArgument
        );
        assert!(last_error().contains("pool"));
        assert_eq!(unsafe { tf_pool_scale_to(std::ptr::null_mut(), 3) }, TfStatus::InvalidArgument);
        assert_eq!(unsafe { tf_pool_shutdown(std::ptr::null_mut()) }, TfStatus::InvalidArgument);
        let mut out: *mut TfPool = std::ptr::null_mut();
        assert_eq!(
            unsafe { tf_pool_create(0, true, std::ptr::null(), &mut out) },
            TfStatus::InvalidArgument,
            "zero workers is invalid"
        );
        unsafe {
            tf_pool_free(std::ptr::null_mut());
            tf_buflist_free(std::ptr::null_mut());
            tf_kv_free(std::ptr::null_mut());
            tf_manager_free(std::ptr::null_mut());
            tf_bytes_free(std::ptr::null_mut(), 0);
        }
    }

    #[test]
    fn map_runs_and_results_come_back_in_order() {
        let pool = make_sim_pool(2);
        let inputs: Vec<Vec<u8>> = (0..10u64).map(be).collect();
        let ptrs: Vec<*const u8> = inputs.iter().map(|v| v.as_ptr()).collect();
        let lens: Vec<usize> = inputs.iter().map(|v| v.len()).collect();
        let function = CString::new("double").unwrap();

        let mut list: *mut TfBufList = std::ptr::null_mut();
        let status = unsafe {
            tf_pool_map(pool, function.as_ptr(), ptrs.as_ptr(), lens.as_ptr(), 10, &mut list)
        };
        assert_eq!(status, TfStatus::Ok);
        assert_eq!(unsafe { tf_buflist_len(list) }, 10);
        for i in 0..10u64 {
            let mut len = 0usize;
            let ptr = unsafe { tf_buflist_get(list, i as usize, &mut len) };
            assert!(!ptr.is_null());
            let bytes = unsafe { std::slice::from_raw_parts(ptr, len) };
            assert_eq!(bytes, be(i * 2).as_slice(), "result {i}");
        }
        let mut len = 0usize;
        assert!(unsafe { tf_buflist_get(list, 10, &mut len) }.is_null(), "out of range");
        unsafe { tf_buflist_free(list) };

        let mut stats = TfPoolStats::default();
        assert_eq!(unsafe { tf_pool_stats(pool, &mut stats) }, TfStatus::Ok);
        assert_eq!(stats.completed, 10);
        assert_eq!(stats.poisoned, 0);

        assert_eq!(unsafe { tf_pool_scale_to(pool, 4) }, TfStatus::Ok);
        assert_eq!(unsafe { tf_pool_shutdown(pool) }, TfStatus::Ok);
        assert_eq!(unsafe { tf_pool_shutdown(pool) }, TfStatus::Ok, "shutdown is idempotent");

        // After shutdown, new work is refused but reports cleanly.
        let mut list2: *mut TfBufList = std::ptr::null_mut();
        let status = unsafe {
            tf_pool_map(pool, function.as_ptr(), ptrs.as_ptr(), lens.as_ptr(), 10, &mut list2)
        };
        assert_eq!(status, TfStatus::ShutDown);
        unsafe { tf_pool_free(pool) };
    }

    #[test]
    fn unknown_function_is_invalid_argument() {
        let pool = make_sim_pool(1);
        let function = CString::new("no_such_function").unwrap();
        let mut list: *mut TfBufList = std::ptr::null_mut();
        let status = unsafe {
            tf_pool_map(pool, function.as_ptr(), std::ptr::null(), std::ptr::null(), 0, &mut list)
        };
        assert_eq!(status, TfStatus::InvalidArgument);
        assert!(last_error().contains("no_such_function"));
        unsafe { tf_pool_free(pool) };
    }

    #[test]
    fn failing_tasks_surface_as_pool_failure() {
        let pool = make_sim_pool(1);
        let function = CString::new("fail_always").unwrap();
        let arg: &[u8] = b"x";
        let ptrs = [arg.as_ptr()];
        let lens = [arg.len()];
        let mut list: *mut TfBufList = std::ptr::null_mut();
        let status = unsafe {
            tf_pool_map(pool, function.as_ptr(), ptrs.as_ptr(), lens.as_ptr(), 1, &mut list)
        };
        assert_eq!(status, TfStatus::PoolFailed);
        assert!(last_error().contains("deliberate failure"), "got: {}", last_error());
        unsafe { tf_pool_free(pool) };
    }

    #[test]
    fn manager_and_kv_round_trip() {
        let bind = CString::new("127.0.0.1:0").unwrap();
        let mut manager: *mut TfManager = std::ptr::null_mut();
        assert_eq!(unsafe { tf_manager_start(bind.as_ptr(), &mut manager) }, TfStatus::Ok);
        let addr = unsafe { CStr::from_ptr(tf_manager_addr(manager)) }.to_owned();

        let mut kv: *mut TfKv = std::ptr::null_mut();
        assert_eq!(unsafe { tf_kv_connect(addr.as_ptr(), &mut kv) }, TfStatus::Ok);

        let key = CString::new("greeting").unwrap();
        let mut version = 0u64;
        let status =
            unsafe { tf_kv_put(kv, key.as_ptr(), b"hello".as_ptr(), 5, &mut version) };
        assert_eq!(status, TfStatus::Ok);
        assert_eq!(version, 1);
        assert_eq!(
            unsafe { tf_kv_put(kv, key.as_ptr(), b"again".as_ptr(), 5, &mut version) },
            TfStatus::Ok
        );
        assert_eq!(version, 2, "versions count up");

        let mut value: *mut u8 = std::ptr::null_mut();
        let mut len = 0usize;
        let mut got_version = 0u64;
        let status =
            unsafe { tf_kv_get(kv, key.as_ptr(), &mut value, &mut len, &mut got_version) };
        assert_eq!(status, TfStatus::Ok);
        assert_eq!(unsafe { std::slice::from_raw_parts(value, len) }, b"again");
        assert_eq!(got_version, 2);
        unsafe { tf_bytes_free(value, len) };

        let missing = CString::new("no-such-key").unwrap();
        let status =
            unsafe { tf_kv_get(kv, missing.as_ptr(), &mut value, &mut len, std::ptr::null_mut()) };
        assert_eq!(status, TfStatus::KeyNotFound);

        unsafe { tf_kv_free(kv) };
        assert_eq!(unsafe { tf_manager_stop(manager) }, TfStatus::Ok);
        assert_eq!(unsafe { tf_manager_stop(manager) }, TfStatus::Ok, "stop is idempotent");
        unsafe { tf_manager_free(manager) };
    }

    #[test]
    fn connect_to_nothing_reports_connect_failure() {
        let addr = CString::new("127.0.0.1:1").unwrap();
        let mut kv: *mut TfKv = std::ptr::null_mut();
        assert_eq!(
            unsafe { tf_kv_connect(addr.as_ptr(), &mut kv) },
            TfStatus::ConnectFailed
        );
        assert!(kv.is_null());
    }

    #[test]
    fn generated_header_is_valid_c() {
        let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/taskforge.h");
        assert!(
            std::path::Path::new(header).exists(),
            "build step should have generated {header}"
        );
        let program = format!("#include \"{header}\"\nint main(void) {{ return 0; }}\n");
        let dir = std::env::temp_dir();
        let src = dir.join("taskforge_header_smoke.c");
        std::fs::write(&src, program).unwrap();
        let out = std::process::Command::new("cc")
            .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
            .arg(&src)
            .output()
            .expect("cc runs");
        assert!(
            out.status.success(),
            "header failed to compile:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
