/* taskforge C API. See tf_last_error() for failure details. */

#ifndef TASKFORGE_H
#define TASKFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum TfStatus {
  // Success.
  TF_STATUS_OK = 0,
  // A pointer was null, a string was not UTF-8, or a value was out of range.
  TF_STATUS_INVALID_ARGUMENT = 1,
  // The pool reported a failure (workers unavailable, task poisoned, ...).
  TF_STATUS_POOL_FAILED = 2,
  // Could not reach (or lost) the remote endpoint.
  TF_STATUS_CONNECT_FAILED = 3,
  // The requested key does not exist.
  TF_STATUS_KEY_NOT_FOUND = 4,
  // A proxy object rejected the request.
  TF_STATUS_PROXY_FAILED = 5,
  // The handle was already shut down.
  TF_STATUS_SHUT_DOWN = 6,
  // An internal invariant failed; details via tf_last_error.
  TF_STATUS_INTERNAL = 7,
} TfStatus;

// An ordered list of byte buffers (map results).
typedef struct TfBufList TfBufList;

// A client connection to a manager.
typedef struct TfKv TfKv;

// A running shared-storage manager.
typedef struct TfManager TfManager;

// A fault-tolerant worker pool.
typedef struct TfPool TfPool;

// Counters describing a pool's lifetime so far.
typedef struct TfPoolStats {
  uint64_t submitted;
  uint64_t dispatched;
  uint64_t completed;
  uint64_t failed_attempts;
  uint64_t resubmissions;
  uint64_t poisoned;
  uint64_t cancelled;
  uint64_t active_workers;
} TfPoolStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tf_version(void);

// Message for the most recent failure on this thread. Valid until the next
// failing call on the same thread; never null.
const char *tf_last_error(void);

// Creates a pool of `workers` workers running the built-in function set.
//
// With `simulated` true, workers are in-process threads and `worker_exe`
// is ignored. Otherwise each worker is an OS process: `worker_exe` names
// the binary to run (it receives a `worker` argument), or null to re-run
// the calling executable — only correct when that executable dispatches a
// `worker` argument to the worker entry point.
//
// # Safety
// `worker_exe` must be null or a valid NUL-terminated string; `out` must
// point to writable storage.
enum TfStatus tf_pool_create(uint32_t workers,
                             bool simulated,
                             const char *worker_exe,
                             struct TfPool **out);

// Applies the named built-in function to `count` argument buffers and
// returns the results in input order.
//
// `args[i]` points at `arg_lens[i]` bytes; a null `args[i]` is only legal
// when `arg_lens[i]` is zero. On success `*out` owns the result list —
// free it with [`tf_buflist_free`].
//
// # Safety
// `args` and `arg_lens` must point to `count` readable elements, and each
// non-null `args[i]` to `arg_lens[i]` readable bytes; `out` must point to
// writable storage.
enum TfStatus tf_pool_map(struct TfPool *handle,
                          const char *function,
                          const uint8_t *const *args,
                          const size_t *arg_lens,
                          size_t count,
                          struct TfBufList **out);

// Changes the target worker count of a live pool.
//
// # Safety
// `handle` must be null or a live pool handle.
enum TfStatus tf_pool_scale_to(struct TfPool *handle, uint32_t workers);

// Snapshots the pool's counters into `*out`.
//
// # Safety
// `out` must point to writable storage for one `TfPoolStats`.
enum TfStatus tf_pool_stats(const struct TfPool *handle, struct TfPoolStats *out);

// Stops all workers and refuses new work. Idempotent.
//
// # Safety
// `handle` must be null or a live pool handle.
enum TfStatus tf_pool_shutdown(struct TfPool *handle);

// Releases the handle (shutting the pool down first if needed). Null is a
// no-op.
//
// # Safety
// `handle` must be null or a live pool handle; it is dead afterwards.
void tf_pool_free(struct TfPool *handle);

// Number of buffers in the list.
//
// # Safety
// `list` must be null or a live list handle.
size_t tf_buflist_len(const struct TfBufList *list);

// Borrows buffer `index`; writes its length to `*len_out`. Returns null if
// `index` is out of range. The pointer stays valid until the list is freed.
//
// # Safety
// `len_out` must be null or point to writable storage.
const uint8_t *tf_buflist_get(const struct TfBufList *list, size_t index, size_t *len_out);

// Releases the list and every buffer in it. Null is a no-op.
//
// # Safety
// `list` must be null or a live list handle; it is dead afterwards.
void tf_buflist_free(struct TfBufList *list);

// Starts a manager bound to `bind_addr` (e.g. "127.0.0.1:0").
//
// # Safety
// `bind_addr` must be a valid NUL-terminated string; `out` must point to
// writable storage.
enum TfStatus tf_manager_start(const char *bind_addr, struct TfManager **out);

// The manager's bound address ("host:port"); valid while the handle lives.
//
// # Safety
// `handle` must be null or a live manager handle.
const char *tf_manager_addr(const struct TfManager *handle);

// Disconnects clients and stops the manager. Idempotent.
//
// # Safety
// `handle` must be null or a live manager handle.
enum TfStatus tf_manager_stop(struct TfManager *handle);

// Releases the handle (stopping the manager first if needed). Null is a
// no-op.
//
// # Safety
// `handle` must be null or a live manager handle; it is dead afterwards.
void tf_manager_free(struct TfManager *handle);

// Connects a key-value client to a manager at `addr`.
//
// # Safety
// `addr` must be a valid NUL-terminated string; `out` must point to
// writable storage.
enum TfStatus tf_kv_connect(const char *addr, struct TfKv **out);

// Stores `value` under `key`; writes the key's new version (1 on first
// write) to `*version_out` unless it is null.
//
// # Safety
// `key` must be a valid NUL-terminated string; `value` must point to `len`
// readable bytes (null only when `len` is zero); `version_out` must be
// null or writable.
enum TfStatus tf_kv_put(struct TfKv *handle,
                        const char *key,
                        const uint8_t *value,
                        size_t len,
                        uint64_t *version_out);

// Fetches `key`. On success `*value_out` owns `*len_out` bytes — release
// with [`tf_bytes_free`] — and `*version_out` (if non-null) receives the
// key's version.
//
// # Safety
// `key` must be a valid NUL-terminated string; `value_out` and `len_out`
// must point to writable storage; `version_out` must be null or writable.
enum TfStatus tf_kv_get(struct TfKv *handle,
                        const char *key,
                        uint8_t **value_out,
                        size_t *len_out,
                        uint64_t *version_out);

// Closes the client connection. Null is a no-op.
//
// # Safety
// `handle` must be null or a live client handle; it is dead afterwards.
void tf_kv_free(struct TfKv *handle);

// Releases a buffer returned by [`tf_kv_get`]. `len` must be the length
// that call reported. Null is a no-op.
//
// # Safety
// `ptr` must be null or exactly the pointer returned by [`tf_kv_get`] with
// its reported length, freed at most once.
void tf_bytes_free(uint8_t *ptr, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TASKFORGE_H */
