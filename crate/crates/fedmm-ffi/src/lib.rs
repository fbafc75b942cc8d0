//! C ABI for the fedmm library: opaque handles over configs and finished
//! runs, integer status codes, and a thread-local last-error message.
//!
//! Conventions:
//! - Constructors return an owned pointer or null; on null, call
//!   [`fedmm_last_error`] for the reason. Every owned pointer must be
//!   released with its matching `*_free` function exactly once.
//! - Accessors return a [`FedmmStatus`] and write through out-pointers.
//! - String getters use the two-call pattern: pass a null buffer to learn
//!   the required capacity (including the NUL terminator), then call again
//!   with a buffer at least that large.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fedmm::config::ExperimentConfig;
use fedmm::error::Error;
use fedmm::federation::{run_experiment, ExperimentResult};
use fedmm::output::history_csv;

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedmmStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration is invalid; see `fedmm_last_error`.
    InvalidConfig = 3,
    /// The operation failed at runtime; see `fedmm_last_error`.
    RuntimeError = 4,
    /// The provided buffer is too small for the result.
    BufferTooSmall = 5,
    /// An index argument is out of range.
    OutOfRange = 6,
}

/// Per-round scalar metrics exposed through [`fedmm_run_round_metric`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedmmMetric {
    ValAuc = 0,
    TestAuc = 1,
    ImgWeightShare = 2,
    TxtWeightShare = 3,
}

/// Opaque experiment configuration handle.
pub struct FedmmConfig {
    inner: ExperimentConfig,
}

/// Opaque handle to one finished seeded run.
pub struct FedmmRun {
    config: ExperimentConfig,
    seed: u64,
    result: ExperimentResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(sanitized).expect("NULs removed"));
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &Error) -> FedmmStatus {
    match err {
        Error::Config(_) => FedmmStatus::InvalidConfig,
        _ => FedmmStatus::RuntimeError,
    }
}

fn fail(err: &Error) -> FedmmStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

/// Copies `text` plus a NUL terminator into `buf`/`cap` using the two-call
/// pattern shared by the string getters.
unsafe fn write_string(
    text: &str,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> FedmmStatus {
    let needed = text.len() + 1;
    if !written.is_null() {
        *written = needed;
    }
    if buf.is_null() {
        return FedmmStatus::Ok;
    }
    if cap < needed {
        set_last_error(&format!("buffer of {cap} bytes, need {needed}"));
        return FedmmStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    FedmmStatus::Ok
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, FedmmStatus> {
    if ptr.is_null() {
        set_last_error("null string argument");
        return Err(FedmmStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        FedmmStatus::InvalidUtf8
    })
}

/// Interface revision; bump on any ABI-breaking change.
#[no_mangle]
pub extern "C" fn fedmm_abi_version() -> u32 {
    1
}

/// Copies the thread's last error message (NUL-terminated) into `buf` and
/// returns the length the message needs, including the terminator; returns
/// 0 when no error is recorded. A null or short buffer leaves the message
/// retrievable by a later call.
///
/// # Safety
/// `buf` must be null or valid for `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fedmm_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(message) = slot.as_ref() else {
            return 0;
        };
        let bytes = message.as_bytes_with_nul();
        if !buf.is_null() && cap >= bytes.len() {
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        }
        bytes.len()
    })
}

/// Returns a fresh configuration with default values. Never fails.
#[no_mangle]
pub extern "C" fn fedmm_config_default() -> *mut FedmmConfig {
    clear_last_error();
    Box::into_raw(Box::new(FedmmConfig {
        inner: ExperimentConfig::default(),
    }))
}

/// Parses a `key = value` configuration text. Returns null on invalid
/// input with the field-level message in `fedmm_last_error`.
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedmm_config_parse(text: *const c_char) -> *mut FedmmConfig {
    clear_last_error();
    let Ok(text) = utf8_arg(text) else {
        return std::ptr::null_mut();
    };
    match ExperimentConfig::parse_str(text) {
        Ok(inner) => Box::into_raw(Box::new(FedmmConfig { inner })),
        Err(err) => {
            set_last_error(&err.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Applies one `key = value` assignment to the config. Cross-field
/// constraints are checked by `fedmm_config_validate` and `fedmm_run`.
///
/// # Safety
/// `config` must be a live pointer from this interface; `key` and `value`
/// must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fedmm_config_set(
    config: *mut FedmmConfig,
    key: *const c_char,
    value: *const c_char,
) -> FedmmStatus {
    clear_last_error();
    let Some(config) = config.as_mut() else {
        set_last_error("null config");
        return FedmmStatus::NullArgument;
    };
    let (key, value) = match (utf8_arg(key), utf8_arg(value)) {
        (Ok(k), Ok(v)) => (k, v),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    match config.inner.set(key, value) {
        Ok(()) => FedmmStatus::Ok,
        Err(err) => fail(&err),
    }
}

/// Checks every cross-field constraint of the config.
///
/// # Safety
/// `config` must be null or a live pointer from this interface.
#[no_mangle]
pub unsafe extern "C" fn fedmm_config_validate(config: *const FedmmConfig) -> FedmmStatus {
    clear_last_error();
    let Some(config) = config.as_ref() else {
        set_last_error("null config");
        return FedmmStatus::NullArgument;
    };
    match config.inner.validate() {
        Ok(()) => FedmmStatus::Ok,
        Err(err) => fail(&err),
    }
}

/// Writes the config's canonical `key = value` form (two-call pattern).
///
/// # Safety
/// `config` must be a live pointer; `buf` null or valid for `cap` bytes;
/// `written` null or valid for one `usize`.
#[no_mangle]
pub unsafe extern "C" fn fedmm_config_normal_form(
    config: *const FedmmConfig,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> FedmmStatus {
    clear_last_error();
    let Some(config) = config.as_ref() else {
        set_last_error("null config");
        return FedmmStatus::NullArgument;
    };
    write_string(&config.inner.to_normal_form(), buf, cap, written)
}

/// Writes the 64-hex-character configuration hash plus NUL terminator.
///
/// # Safety
/// `config` must be a live pointer; `buf` must hold at least 65 bytes.
#[no_mangle]
pub unsafe extern "C" fn fedmm_config_hash(
    config: *const FedmmConfig,
    buf: *mut c_char,
    cap: usize,
) -> FedmmStatus {
    clear_last_error();
    let Some(config) = config.as_ref() else {
        set_last_error("null config");
        return FedmmStatus::NullArgument;
    };
    if buf.is_null() {
        set_last_error("null hash buffer");
        return FedmmStatus::NullArgument;
    }
    write_string(&config.inner.hash(), buf, cap, std::ptr::null_mut())
}

/// Releases a config handle. Null is a no-op.
///
/// # Safety
/// `config` must be null or an owned pointer not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedmm_config_free(config: *mut FedmmConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the configured experiment for one seed. Blocks until done; returns
/// null on failure with the reason in `fedmm_last_error`.
///
/// # Safety
/// `config` must be null or a live pointer from this interface.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run(config: *const FedmmConfig, seed: u64) -> *mut FedmmRun {
    clear_last_error();
    let Some(config) = config.as_ref() else {
        set_last_error("null config");
        return std::ptr::null_mut();
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| run_experiment(&config.inner, seed)));
    match outcome {
        Ok(Ok(result)) => Box::into_raw(Box::new(FedmmRun {
            config: config.inner.clone(),
            seed,
            result,
        })),
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            std::ptr::null_mut()
        }
        Err(_) => {
            set_last_error("internal panic during the run");
            std::ptr::null_mut()
        }
    }
}

unsafe fn run_scalar(
    run: *const FedmmRun,
    out: *mut f64,
    get: impl FnOnce(&FedmmRun) -> f64,
) -> FedmmStatus {
    clear_last_error();
    if out.is_null() {
        set_last_error("null out-pointer");
        return FedmmStatus::NullArgument;
    }
    let Some(run) = run.as_ref() else {
        set_last_error("null run");
        return FedmmStatus::NullArgument;
    };
    *out = get(run);
    FedmmStatus::Ok
}

/// Best validation macro AUC across rounds.
///
/// # Safety
/// `run` must be a live pointer; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run_best_val_auc(
    run: *const FedmmRun,
    out: *mut f64,
) -> FedmmStatus {
    run_scalar(run, out, |r| r.result.best_val_auc)
}

/// Test macro AUC of the round selected on validation.
///
/// # Safety
/// `run` must be a live pointer; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run_best_test_auc(
    run: *const FedmmRun,
    out: *mut f64,
) -> FedmmStatus {
    run_scalar(run, out, |r| r.result.best_test_auc)
}

/// Round whose model scored the best validation AUC.
///
/// # Safety
/// `run` must be a live pointer; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run_best_round(run: *const FedmmRun, out: *mut u64) -> FedmmStatus {
    clear_last_error();
    if out.is_null() {
        set_last_error("null out-pointer");
        return FedmmStatus::NullArgument;
    }
    let Some(run) = run.as_ref() else {
        set_last_error("null run");
        return FedmmStatus::NullArgument;
    };
    *out = run.result.best_round;
    FedmmStatus::Ok
}

/// Number of recorded reports: the initial model plus one per round.
///
/// # Safety
/// `run` must be a live pointer; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run_rounds(run: *const FedmmRun, out: *mut u64) -> FedmmStatus {
    clear_last_error();
    if out.is_null() {
        set_last_error("null out-pointer");
        return FedmmStatus::NullArgument;
    }
    let Some(run) = run.as_ref() else {
        set_last_error("null run");
        return FedmmStatus::NullArgument;
    };
    *out = run.result.history.len() as u64;
    FedmmStatus::Ok
}

/// One scalar from the report at `index` (0 = initial model).
///
/// # Safety
/// `run` must be a live pointer; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run_round_metric(
    run: *const FedmmRun,
    index: u64,
    metric: FedmmMetric,
    out: *mut f64,
) -> FedmmStatus {
    clear_last_error();
    if out.is_null() {
        set_last_error("null out-pointer");
        return FedmmStatus::NullArgument;
    }
    let Some(run) = run.as_ref() else {
        set_last_error("null run");
        return FedmmStatus::NullArgument;
    };
    let Some(report) = run.result.history.get(index as usize) else {
        set_last_error(&format!(
            "round index {index} out of range 0..{}",
            run.result.history.len()
        ));
        return FedmmStatus::OutOfRange;
    };
    *out = match metric {
        FedmmMetric::ValAuc => report.val_auc,
        FedmmMetric::TestAuc => report.test_auc,
        FedmmMetric::ImgWeightShare => report.img_weight_share,
        FedmmMetric::TxtWeightShare => report.txt_weight_share,
    };
    FedmmStatus::Ok
}

/// Writes the run's full history CSV (two-call pattern), byte-identical to
/// what the CLI writes for the same config and seed.
///
/// # Safety
/// `run` must be a live pointer; `buf` null or valid for `cap` bytes;
/// `written` null or valid for one `usize`.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run_history_csv(
    run: *const FedmmRun,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> FedmmStatus {
    clear_last_error();
    let Some(run) = run.as_ref() else {
        set_last_error("null run");
        return FedmmStatus::NullArgument;
    };
    let csv = history_csv(&run.config, run.seed, &run.result.history);
    write_string(&csv, buf, cap, written)
}

/// Releases a run handle. Null is a no-op.
///
/// # Safety
/// `run` must be null or an owned pointer not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedmm_run_free(run: *mut FedmmRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
