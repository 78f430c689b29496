//! C interface to a k-selectable sloppy heap over `int64_t` keys.
//!
//! Heaps are opaque handles created by [`sh_heap_new`] or [`sh_heap_build`]
//! and released with [`sh_heap_free`]. Every fallible call returns an
//! [`ShStatus`]; results come back through out-pointers, which are left
//! untouched on failure. A panic inside the library is caught at the
//! boundary, reported as [`ShStatus::Panic`], and poisons the handle: all
//! later calls on it except `sh_heap_free` return [`ShStatus::Poisoned`].

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use sloppy_heap::{Config, ConfigError, HeapError, Mode, SloppyHeap};

/// Opaque heap handle.
pub struct ShHeap {
    inner: SloppyHeap<i64>,
    poisoned: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShStatus {
    Ok = 0,
    NullPointer = 1,
    /// k below 2 or a work budget below 8.
    InvalidConfig = 2,
    /// The quantile index is outside 1..=k.
    IndexOutOfRange = 3,
    /// The requested quantile holds no items.
    EmptyQuantile = 4,
    Internal = 5,
    Panic = 6,
    Poisoned = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShMode {
    Exact = 0,
    Sloppy = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShPotential {
    pub p1: f64,
    pub p2: f64,
    pub total: f64,
}

/// Counters and measurements since the heap was created.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShStats {
    pub ops: u64,
    pub inserts: u64,
    pub deletes: u64,
    pub len: u64,
    pub k: u64,
    pub budget: u32,
    /// 0 exact, 1 sloppy.
    pub mode: u32,
    pub buckets: u64,
    pub zeta: f64,
    pub max_op_work: u64,
    pub mean_op_work: f64,
    pub p99_op_work: u64,
    pub max_buckets_at_round_boundary: u64,
    pub max_size_zeta_ratio: f64,
    pub size_bound_violations: u64,
    pub rounds_completed: u64,
    pub max_round_drift: f64,
    pub drift_violations: u64,
    pub splits_completed: u64,
    pub split_property_violations: u64,
    pub merges_completed: u64,
    pub fallback_activations: u64,
    pub mode_transitions: u64,
}

fn config(k: u32, budget: u32) -> Config {
    let cfg = Config::new(k as usize);
    if budget == 0 {
        cfg
    } else {
        cfg.with_budget(budget)
    }
}

fn config_status(_: ConfigError) -> ShStatus {
    ShStatus::InvalidConfig
}

fn heap_status(e: &HeapError) -> ShStatus {
    match e {
        HeapError::IndexOutOfRange { .. } => ShStatus::IndexOutOfRange,
        HeapError::EmptyQuantile { .. } => ShStatus::EmptyQuantile,
        HeapError::Internal(_) => ShStatus::Internal,
    }
}

fn boxed(heap: SloppyHeap<i64>, out: *mut *mut ShHeap) -> ShStatus {
    let h = Box::new(ShHeap {
        inner: heap,
        poisoned: false,
    });
    // SAFETY: callers checked `out` for null; the caller owns the slot.
    unsafe { *out = Box::into_raw(h) };
    ShStatus::Ok
}

/// Run `f` on a live handle, turning a panic into `Panic` and poisoning it.
fn with_heap<F>(heap: *mut ShHeap, f: F) -> ShStatus
where
    F: FnOnce(&mut SloppyHeap<i64>) -> ShStatus,
{
    // SAFETY: the caller promises `heap` is null or a live handle with no
    // other reference active during this call.
    let Some(h) = (unsafe { heap.as_mut() }) else {
        return ShStatus::NullPointer;
    };
    if h.poisoned {
        return ShStatus::Poisoned;
    }
    match catch_unwind(AssertUnwindSafe(|| f(&mut h.inner))) {
        Ok(status) => status,
        Err(_) => {
            h.poisoned = true;
            ShStatus::Panic
        }
    }
}

/// Create an empty heap. A `budget` of 0 selects the default of 16.
///
/// # Safety
/// `out` must be null or valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_new(k: u32, budget: u32, out: *mut *mut ShHeap) -> ShStatus {
    if out.is_null() {
        return ShStatus::NullPointer;
    }
    match catch_unwind(|| SloppyHeap::new(config(k, budget))) {
        Ok(Ok(heap)) => boxed(heap, out),
        Ok(Err(e)) => config_status(e),
        Err(_) => ShStatus::Panic,
    }
}

/// Create a heap holding `len` keys read from `keys`. `keys` may be null
/// when `len` is 0.
///
/// # Safety
/// `keys` must be valid for reading `len` values and `out` valid for
/// writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_build(
    k: u32,
    budget: u32,
    keys: *const i64,
    len: usize,
    out: *mut *mut ShHeap,
) -> ShStatus {
    if out.is_null() || (keys.is_null() && len > 0) {
        return ShStatus::NullPointer;
    }
    let keys: &[i64] = if len == 0 {
        &[]
    } else {
        // SAFETY: checked non-null above; length is the caller's promise.
        unsafe { slice::from_raw_parts(keys, len) }
    };
    match catch_unwind(|| SloppyHeap::build(config(k, budget), keys.iter().copied())) {
        Ok(Ok(heap)) => boxed(heap, out),
        Ok(Err(e)) => config_status(e),
        Err(_) => ShStatus::Panic,
    }
}

/// Release a heap. Null is ignored.
///
/// # Safety
/// `heap` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_free(heap: *mut ShHeap) {
    if !heap.is_null() {
        // SAFETY: ownership returns to Rust exactly once per the contract.
        drop(unsafe { Box::from_raw(heap) });
    }
}

/// # Safety
/// `heap` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_insert(heap: *mut ShHeap, key: i64) -> ShStatus {
    with_heap(heap, |h| {
        h.insert(key);
        ShStatus::Ok
    })
}

/// Remove some key from the `i`-th of the heap's k quantiles (1-based) and
/// store it in `out_key`.
///
/// # Safety
/// `heap` must be null or a live handle; `out_key` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_delete(
    heap: *mut ShHeap,
    i: usize,
    out_key: *mut i64,
) -> ShStatus {
    if out_key.is_null() {
        return ShStatus::NullPointer;
    }
    with_heap(heap, |h| match h.delete_i(i) {
        Ok(key) => {
            // SAFETY: checked non-null above.
            unsafe { *out_key = key };
            ShStatus::Ok
        }
        Err(e) => heap_status(&e),
    })
}

/// Number of keys held; 0 for a null handle.
///
/// # Safety
/// `heap` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_len(heap: *const ShHeap) -> usize {
    // SAFETY: per the contract.
    unsafe { heap.as_ref() }.map_or(0, |h| h.inner.len())
}

/// # Safety
/// `heap` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_mode(heap: *mut ShHeap, out: *mut ShMode) -> ShStatus {
    if out.is_null() {
        return ShStatus::NullPointer;
    }
    with_heap(heap, |h| {
        let mode = match h.mode() {
            Mode::Exact => ShMode::Exact,
            Mode::Sloppy => ShMode::Sloppy,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = mode };
        ShStatus::Ok
    })
}

/// Check every structural invariant and store the number of violations.
///
/// # Safety
/// `heap` must be null or a live handle; `violations` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_audit(heap: *mut ShHeap, violations: *mut usize) -> ShStatus {
    if violations.is_null() {
        return ShStatus::NullPointer;
    }
    with_heap(heap, |h| {
        let n = h.audit().violations.len();
        // SAFETY: checked non-null above.
        unsafe { *violations = n };
        ShStatus::Ok
    })
}

/// # Safety
/// `heap` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_potential(heap: *mut ShHeap, out: *mut ShPotential) -> ShStatus {
    if out.is_null() {
        return ShStatus::NullPointer;
    }
    with_heap(heap, |h| {
        let p = h.potential();
        // SAFETY: checked non-null above.
        unsafe {
            *out = ShPotential {
                p1: p.p1,
                p2: p.p2,
                total: p.total,
            }
        };
        ShStatus::Ok
    })
}

/// # Safety
/// `heap` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sh_heap_stats(heap: *mut ShHeap, out: *mut ShStats) -> ShStatus {
    if out.is_null() {
        return ShStatus::NullPointer;
    }
    with_heap(heap, |h| {
        let s = h.stats();
        let stats = ShStats {
            ops: s.ops,
            inserts: s.inserts,
            deletes: s.deletes,
            len: s.n as u64,
            k: s.k as u64,
            budget: s.budget,
            mode: match s.mode {
                Mode::Exact => ShMode::Exact as u32,
                Mode::Sloppy => ShMode::Sloppy as u32,
            },
            buckets: s.buckets as u64,
            zeta: s.zeta,
            max_op_work: s.max_op_work,
            mean_op_work: s.mean_op_work,
            p99_op_work: s.p99_op_work,
            max_buckets_at_round_boundary: s.max_buckets_at_round_boundary as u64,
            max_size_zeta_ratio: s.max_size_zeta_ratio,
            size_bound_violations: s.size_bound_violations,
            rounds_completed: s.rounds_completed,
            max_round_drift: s.max_round_drift,
            drift_violations: s.drift_violations,
            splits_completed: s.splits_completed,
            split_property_violations: s.split_property_violations,
            merges_completed: s.merges_completed,
            fallback_activations: s.fallback_activations,
            mode_transitions: s.mode_transitions,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = stats };
        ShStatus::Ok
    })
}

/// Static, NUL-terminated description of a status code.
#[no_mangle]
pub extern "C" fn sh_status_message(status: ShStatus) -> *const c_char {
    let msg: &'static CStr = match status {
        ShStatus::Ok => c"ok",
        ShStatus::NullPointer => c"null pointer argument",
        ShStatus::InvalidConfig => {
            c"invalid configuration: k must be at least 2 and budget 0 or at least 8"
        }
        ShStatus::IndexOutOfRange => c"quantile index outside 1..=k",
        ShStatus::EmptyQuantile => c"the requested quantile is empty",
        ShStatus::Internal => c"internal invariant broken",
        ShStatus::Panic => c"panic inside the library; the handle is now poisoned",
        ShStatus::Poisoned => c"handle poisoned by an earlier panic",
    };
    msg.as_ptr()
}

/// Library version as a static, NUL-terminated string.
#[no_mangle]
pub extern "C" fn sh_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
