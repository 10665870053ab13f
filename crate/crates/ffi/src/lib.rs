//! C ABI over `branchy`: load a saved model, run early-exit inference on raw
//! text, and query per-exit cost.
//!
//! Every fallible function returns a [`BranchyStatus`]; on failure the message
//! is kept per thread and can be fetched with [`branchy_last_error_message`].
//! Panics never cross the boundary — they surface as `BRANCHY_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use branchy::cost::{self, ExitDistribution};
use branchy::data::tokenize;
use branchy::engine::infer_early_exit;
use branchy::{ErrorKind, SavedModel};

/// Opaque model handle. Create with [`branchy_model_load`], release with
/// [`branchy_model_free`]. A handle may be shared across threads for reads.
pub struct BranchyModelHandle {
    saved: SavedModel,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchyStatus {
    Ok = 0,
    /// Bad configuration, unsupported call order, or invalid argument value.
    UsageError = 1,
    /// Unreadable, malformed or incompatible input.
    DataError = 2,
    /// Numerical failure.
    NumericalError = 3,
    NullArgument = 4,
    InvalidUtf8 = 5,
    /// The output buffer is too small; the needed size was reported.
    BufferTooSmall = 6,
    Panic = 7,
}

/// Outcome of one early-exit inference.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BranchyExitResult {
    /// Predicted class index; see [`branchy_model_label_name`].
    pub prediction: u32,
    /// 1-based exit that produced the answer.
    pub chosen_exit: u32,
    pub layers_evaluated: u32,
    /// Probability of the predicted class at the chosen exit.
    pub confidence: f64,
    /// Entropy at the chosen exit.
    pub entropy: f64,
    /// Multiply-accumulates spent on this query.
    pub flops: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    LAST_ERROR.with(|e| *e.borrow_mut() = bytes);
}

fn fail(status: BranchyStatus, msg: impl Into<String>) -> BranchyStatus {
    set_error(msg);
    status
}

fn from_error(err: branchy::Error) -> BranchyStatus {
    let status = match err.kind() {
        ErrorKind::Usage => BranchyStatus::UsageError,
        ErrorKind::Data => BranchyStatus::DataError,
        ErrorKind::Numerical => BranchyStatus::NumericalError,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> BranchyStatus) -> BranchyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == BranchyStatus::Ok {
                LAST_ERROR.with(|e| e.borrow_mut().clear());
            }
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(BranchyStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(BranchyStatus::NullArgument, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, BranchyStatus> {
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BranchyStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

/// Copies `bytes` plus a NUL terminator into `buf` when it fits; `needed`
/// always receives the full size including the terminator.
unsafe fn copy_out(bytes: &[u8], buf: *mut c_char, len: usize, needed: *mut usize) -> BranchyStatus {
    let total = bytes.len() + 1;
    if !needed.is_null() {
        *needed = total;
    }
    if buf.is_null() || len < total {
        return fail(
            BranchyStatus::BufferTooSmall,
            format!("buffer of {len} bytes, {total} needed"),
        );
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    BranchyStatus::Ok
}

/// Loads a model file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_load(path: *const c_char, out: *mut *mut BranchyModelHandle) -> BranchyStatus {
    guard(|| {
        non_null!(path, out);
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match branchy::persist::load_model(path) {
            Ok(saved) => {
                *out = Box::into_raw(Box::new(BranchyModelHandle { saved }));
                BranchyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`branchy_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_free(handle: *mut BranchyModelHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_num_exits(handle: *const BranchyModelHandle, out: *mut usize) -> BranchyStatus {
    guard(|| {
        non_null!(handle, out);
        *out = (*handle).saved.model.num_exits();
        BranchyStatus::Ok
    })
}

/// # Safety
/// `handle` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_num_classes(
    handle: *const BranchyModelHandle,
    out: *mut usize,
) -> BranchyStatus {
    guard(|| {
        non_null!(handle, out);
        *out = (*handle).saved.model.num_classes();
        BranchyStatus::Ok
    })
}

/// Copies the calibrated entropy thresholds into `buf[0..len]`. `*count`
/// receives the number of exits; too small a buffer is `BUFFER_TOO_SMALL`.
///
/// # Safety
/// `handle` must be live, `count` writable, `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_thresholds(
    handle: *const BranchyModelHandle,
    buf: *mut f64,
    len: usize,
    count: *mut usize,
) -> BranchyStatus {
    guard(|| {
        non_null!(handle, count);
        let Some(t) = &(*handle).saved.model.thresholds else {
            return fail(BranchyStatus::UsageError, "model is not calibrated");
        };
        let t = t.values();
        *count = t.len();
        if buf.is_null() || len < t.len() {
            return fail(
                BranchyStatus::BufferTooSmall,
                format!("room for {len} thresholds, {} needed", t.len()),
            );
        }
        ptr::copy_nonoverlapping(t.as_ptr(), buf, t.len());
        BranchyStatus::Ok
    })
}

/// Copies the name of class `index` as a NUL-terminated string.
///
/// # Safety
/// `handle` must be live; `buf` valid for `len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_label_name(
    handle: *const BranchyModelHandle,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> BranchyStatus {
    guard(|| {
        non_null!(handle);
        let labels = &(*handle).saved.labels;
        match labels.get(index) {
            Some(l) => copy_out(l.as_bytes(), buf, len, needed),
            None => fail(
                BranchyStatus::UsageError,
                format!("class index {index} out of range ({} classes)", labels.len()),
            ),
        }
    })
}

/// Tokenizes `utterance` with the model's vocabulary and runs early-exit
/// inference.
///
/// # Safety
/// `handle` must be live, `utterance` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_infer_text(
    handle: *const BranchyModelHandle,
    utterance: *const c_char,
    out: *mut BranchyExitResult,
) -> BranchyStatus {
    guard(|| {
        non_null!(handle, utterance, out);
        let text = match str_arg(utterance, "utterance") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let saved = &(*handle).saved;
        let tokens = saved.vocab.encode(&tokenize(text));
        match infer_early_exit(&saved.model, &tokens) {
            Ok(t) => {
                *out = BranchyExitResult {
                    prediction: t.prediction as u32,
                    chosen_exit: t.chosen_exit as u32,
                    layers_evaluated: t.layers_evaluated as u32,
                    confidence: t.probs_at_exit[t.prediction],
                    entropy: *t.entropies.last().expect("at least one exit"),
                    flops: t.flops,
                };
                BranchyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Analytic cumulative FLOPs to reach exit `exit` (1-based) for sequences of
/// `seq_len` tokens (ignored by feed-forward models).
///
/// # Safety
/// `handle` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_exit_flops(
    handle: *const BranchyModelHandle,
    exit: usize,
    seq_len: usize,
    out: *mut u64,
) -> BranchyStatus {
    guard(|| {
        non_null!(handle, out);
        match cost::count_flops(&(*handle).saved.model, exit, seq_len) {
            Ok(f) => {
                *out = f;
                BranchyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Cumulative parameter count up to exit `exit` (1-based).
///
/// # Safety
/// `handle` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_model_exit_params(
    handle: *const BranchyModelHandle,
    exit: usize,
    include_embedding: bool,
    out: *mut u64,
) -> BranchyStatus {
    guard(|| {
        non_null!(handle, out);
        match cost::count_params(&(*handle).saved.model, exit, include_embedding) {
            Ok(p) => {
                *out = p;
                BranchyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// `Σ flops[n] · probs[n]` over `n` exits. `probs` must be non-negative and
/// sum to 1 within `tolerance` (about 1e-3 suits distributions printed to four decimals).
///
/// # Safety
/// `flops` and `probs` must be valid for `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_expected_complexity(
    flops: *const f64,
    probs: *const f64,
    n: usize,
    tolerance: f64,
    out: *mut f64,
) -> BranchyStatus {
    guard(|| {
        non_null!(flops, probs, out);
        if n == 0 {
            return fail(BranchyStatus::UsageError, "need at least one exit");
        }
        let flops = std::slice::from_raw_parts(flops, n);
        let probs = std::slice::from_raw_parts(probs, n).to_vec();
        let result =
            ExitDistribution::with_tolerance(probs, tolerance).and_then(|d| cost::expected_complexity(flops, &d));
        match result {
            Ok(v) => {
                *out = v;
                BranchyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// `(baseline − expected) / baseline`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn branchy_relative_savings(expected: f64, baseline: f64, out: *mut f64) -> BranchyStatus {
    guard(|| {
        non_null!(out);
        match cost::relative_savings(expected, baseline) {
            Ok(v) => {
                *out = v;
                BranchyStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Copies this thread's last error message (NUL-terminated) into `buf` and
/// returns the size it needs, terminator included; 1 means no error. Pass a
/// null `buf` to query the size.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn branchy_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let total = msg.len() + 1;
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        total
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn branchy_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
