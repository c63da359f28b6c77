//! C ABI over the engine: opaque handles, integer status codes, and a
//! thread-local last-error message. Every entry point is panic-safe and
//! null-safe; handles are freed exactly once with their `_free` function.
//!
//! The generated header lands in `include/lwau.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use lwau::config::{Precision, RunConfig};
use lwau::data::{poolfile, ClassPool, Split};
use lwau::meta::{
    self, load_state, save_state, EvalRunOptions, MetaState, TrainOptions, TrainPools, Trainer,
};
use lwau::probes;
use lwau::tensor::{DType, Scalar};

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LwauStatus {
    LwauOk = 0,
    LwauNullPointer = 1,
    LwauInvalidArgument = 2,
    LwauIoError = 3,
    LwauRuntimeError = 4,
    LwauBufferTooSmall = 5,
}

/// Episodic evaluation summary.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LwauEvalResult {
    pub accuracy: f64,
    pub half_width_95: f64,
    pub mean_adapt_seconds: f64,
}

/// A validated run configuration (opaque).
pub struct LwauConfig {
    inner: RunConfig,
}

enum AnyPool {
    F32(ClassPool<f32>),
    F64(ClassPool<f64>),
}

/// A class pool at either precision (opaque).
pub struct LwauPool {
    inner: AnyPool,
}

enum AnyState {
    F32(MetaState<f32>),
    F64(MetaState<f64>),
}

/// A trained meta-state at either precision (opaque).
pub struct LwauState {
    inner: AnyState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: LwauStatus, message: impl AsRef<str>) -> LwauStatus {
    set_error(message.as_ref());
    status
}

/// Copies the most recent error message on this thread into `buf` and
/// returns the full length (excluding the terminator). A zero `cap` just
/// queries the length.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null when `cap` is 0.
#[no_mangle]
pub unsafe extern "C" fn lwau_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if cap > 0 && !buf.is_null() {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            // Guarantee termination even on truncation.
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn lwau_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, LwauStatus> {
    if ptr.is_null() {
        return Err(fail(LwauStatus::LwauNullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail(
            LwauStatus::LwauInvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn guarded(body: impl FnOnce() -> LwauStatus) -> LwauStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(LwauStatus::LwauRuntimeError, "internal panic"),
    }
}

fn write_out<T>(out: *mut *mut T, value: T) -> LwauStatus {
    if out.is_null() {
        return fail(LwauStatus::LwauNullPointer, "out pointer is null");
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    LwauStatus::LwauOk
}

// ---- configuration ----------------------------------------------------------

/// Parses a TOML configuration from text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lwau_config_parse(
    text: *const c_char,
    out: *mut *mut LwauConfig,
) -> LwauStatus {
    guarded(|| {
        let text = match read_str(text, "config text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_toml(text) {
            Ok(inner) => write_out(out, LwauConfig { inner }),
            Err(e) => fail(LwauStatus::LwauInvalidArgument, e.to_string()),
        }
    })
}

/// Loads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lwau_config_load(
    path: *const c_char,
    out: *mut *mut LwauConfig,
) -> LwauStatus {
    guarded(|| {
        let path = match read_str(path, "config path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RunConfig::load(Path::new(path)) {
            Ok(inner) => write_out(out, LwauConfig { inner }),
            Err(e) => fail(LwauStatus::LwauInvalidArgument, e.to_string()),
        }
    })
}

/// Copies the 64-hex-character configuration fingerprint (plus NUL).
///
/// # Safety
/// `cfg` must be a live handle; `buf` must hold at least `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn lwau_config_fingerprint(
    cfg: *const LwauConfig,
    buf: *mut c_char,
    cap: usize,
) -> LwauStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(LwauStatus::LwauNullPointer, "config handle is null");
        };
        let fp = cfg.inner.fingerprint();
        if buf.is_null() || cap < fp.len() + 1 {
            return fail(
                LwauStatus::LwauBufferTooSmall,
                format!("fingerprint needs {} bytes", fp.len() + 1),
            );
        }
        std::ptr::copy_nonoverlapping(fp.as_ptr(), buf.cast(), fp.len());
        *buf.add(fp.len()) = 0;
        LwauStatus::LwauOk
    })
}

/// Releases a configuration handle.
///
/// # Safety
/// `cfg` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn lwau_config_free(cfg: *mut LwauConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ---- pools --------------------------------------------------------------------

fn parse_split(name: &str) -> Result<Split, LwauStatus> {
    Split::parse(name).ok_or_else(|| {
        fail(
            LwauStatus::LwauInvalidArgument,
            format!("unknown split {name:?}"),
        )
    })
}

/// Generates the pool for one split from the configured data source.
///
/// # Safety
/// `cfg` must be live; `split` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn lwau_pool_generate(
    cfg: *const LwauConfig,
    split: *const c_char,
    out: *mut *mut LwauPool,
) -> LwauStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(LwauStatus::LwauNullPointer, "config handle is null");
        };
        let split = match read_str(split, "split").and_then(|s| parse_split(s)) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let inner = match cfg.inner.precision {
            Precision::F32 => cfg
                .inner
                .build_pools::<f32>()
                .map(|(train, val, test)| AnyPool::F32(pick(split, train, val, test))),
            Precision::F64 => cfg
                .inner
                .build_pools::<f64>()
                .map(|(train, val, test)| AnyPool::F64(pick(split, train, val, test))),
        };
        match inner {
            Ok(inner) => write_out(out, LwauPool { inner }),
            Err(e) => fail(LwauStatus::LwauRuntimeError, e.to_string()),
        }
    })
}

fn pick<T: Scalar>(
    split: Split,
    train: ClassPool<T>,
    val: ClassPool<T>,
    test: ClassPool<T>,
) -> ClassPool<T> {
    match split {
        Split::Train => train,
        Split::Validation => val,
        Split::Test => test,
    }
}

/// Loads a pool file written by `lwau_pool_save` or the CLI.
///
/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn lwau_pool_load(path: *const c_char, out: *mut *mut LwauPool) -> LwauStatus {
    guarded(|| {
        let path = match read_str(path, "pool path") {
            Ok(p) => PathBuf::from(p),
            Err(s) => return s,
        };
        let dtype = match poolfile::peek_pool_dtype(&path) {
            Ok(d) => d,
            Err(e) => return fail(LwauStatus::LwauIoError, e.to_string()),
        };
        let inner = match dtype {
            DType::F32 => poolfile::load_pool::<f32>(&path).map(AnyPool::F32),
            DType::F64 => poolfile::load_pool::<f64>(&path).map(AnyPool::F64),
        };
        match inner {
            Ok(inner) => write_out(out, LwauPool { inner }),
            Err(e) => fail(LwauStatus::LwauIoError, e.to_string()),
        }
    })
}

/// Writes a pool to disk (bit-exact round trip).
///
/// # Safety
/// `pool` live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lwau_pool_save(pool: *const LwauPool, path: *const c_char) -> LwauStatus {
    guarded(|| {
        let Some(pool) = pool.as_ref() else {
            return fail(LwauStatus::LwauNullPointer, "pool handle is null");
        };
        let path = match read_str(path, "pool path") {
            Ok(p) => PathBuf::from(p),
            Err(s) => return s,
        };
        let result = match &pool.inner {
            AnyPool::F32(p) => poolfile::save_pool(p, &path),
            AnyPool::F64(p) => poolfile::save_pool(p, &path),
        };
        match result {
            Ok(()) => LwauStatus::LwauOk,
            Err(e) => fail(LwauStatus::LwauIoError, e.to_string()),
        }
    })
}

/// Number of classes in the pool; 0 for a null handle.
///
/// # Safety
/// `pool` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn lwau_pool_class_count(pool: *const LwauPool) -> usize {
    match pool.as_ref() {
        Some(p) => match &p.inner {
            AnyPool::F32(p) => p.class_count(),
            AnyPool::F64(p) => p.class_count(),
        },
        None => 0,
    }
}

/// Releases a pool handle.
///
/// # Safety
/// `pool` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn lwau_pool_free(pool: *mut LwauPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

// ---- training and states -----------------------------------------------------

/// Runs the configured training loop. Pools are generated from the
/// configuration; `output_dir` may be null to skip checkpoint files.
///
/// # Safety
/// `cfg` live; `output_dir` NUL-terminated or null; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn lwau_train(
    cfg: *const LwauConfig,
    output_dir: *const c_char,
    workers: u32,
    out: *mut *mut LwauState,
) -> LwauStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(LwauStatus::LwauNullPointer, "config handle is null");
        };
        let output_dir = if output_dir.is_null() {
            None
        } else {
            match read_str(output_dir, "output dir") {
                Ok(p) => Some(PathBuf::from(p)),
                Err(s) => return s,
            }
        };
        let inner = match cfg.inner.precision {
            Precision::F32 => train_impl::<f32>(&cfg.inner, output_dir, workers).map(AnyState::F32),
            Precision::F64 => train_impl::<f64>(&cfg.inner, output_dir, workers).map(AnyState::F64),
        };
        match inner {
            Ok(inner) => write_out(out, LwauState { inner }),
            Err(message) => fail(LwauStatus::LwauRuntimeError, message),
        }
    })
}

fn train_impl<T: Scalar>(
    cfg: &RunConfig,
    output_dir: Option<PathBuf>,
    workers: u32,
) -> Result<MetaState<T>, String> {
    let spec = cfg.network_spec().map_err(|e| e.to_string())?;
    let params = cfg.train_params().map_err(|e| e.to_string())?;
    let (train_pool, val_pool, _) = cfg.build_pools::<T>().map_err(|e| e.to_string())?;
    let trainer: Trainer<T> = Trainer::new(spec, params).map_err(|e| e.to_string())?;
    let outcome = meta::train(
        &trainer,
        &TrainPools {
            train: &train_pool,
            validation: &val_pool,
        },
        cfg.raw.seed,
        &cfg.fingerprint(),
        &TrainOptions {
            output_dir,
            interval: cfg.raw.output.checkpoint_interval,
            workers: workers.max(1) as usize,
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(outcome.final_state)
}

/// Loads a checkpoint written by this library or the CLI.
///
/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn lwau_state_load(path: *const c_char, out: *mut *mut LwauState) -> LwauStatus {
    guarded(|| {
        let path = match read_str(path, "checkpoint path") {
            Ok(p) => PathBuf::from(p),
            Err(s) => return s,
        };
        let dtype = match meta::peek_checkpoint_dtype(&path) {
            Ok(d) => d,
            Err(e) => return fail(LwauStatus::LwauIoError, e.to_string()),
        };
        let inner = match dtype {
            DType::F32 => load_state::<f32>(&path).map(AnyState::F32),
            DType::F64 => load_state::<f64>(&path).map(AnyState::F64),
        };
        match inner {
            Ok(inner) => write_out(out, LwauState { inner }),
            Err(e) => fail(LwauStatus::LwauIoError, e.to_string()),
        }
    })
}

/// Writes the state as a checkpoint (bit-exact round trip).
///
/// # Safety
/// `state` live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lwau_state_save(state: *const LwauState, path: *const c_char) -> LwauStatus {
    guarded(|| {
        let Some(state) = state.as_ref() else {
            return fail(LwauStatus::LwauNullPointer, "state handle is null");
        };
        let path = match read_str(path, "checkpoint path") {
            Ok(p) => PathBuf::from(p),
            Err(s) => return s,
        };
        let result = match &state.inner {
            AnyState::F32(s) => save_state(s, &path),
            AnyState::F64(s) => save_state(s, &path),
        };
        match result {
            Ok(()) => LwauStatus::LwauOk,
            Err(e) => fail(LwauStatus::LwauIoError, e.to_string()),
        }
    })
}

/// Number of layers (= per-layer learning rates); 0 for null.
///
/// # Safety
/// `state` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn lwau_state_layer_count(state: *const LwauState) -> usize {
    match state.as_ref() {
        Some(s) => match &s.inner {
            AnyState::F32(s) => s.alpha.len(),
            AnyState::F64(s) => s.alpha.len(),
        },
        None => 0,
    }
}

/// Copies the per-layer learning rates (bottom to top) into `buf`.
///
/// # Safety
/// `state` live; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn lwau_state_alpha(
    state: *const LwauState,
    buf: *mut f64,
    cap: usize,
) -> LwauStatus {
    guarded(|| {
        let Some(state) = state.as_ref() else {
            return fail(LwauStatus::LwauNullPointer, "state handle is null");
        };
        let alpha = match &state.inner {
            AnyState::F32(s) => s.alpha_f64(),
            AnyState::F64(s) => s.alpha_f64(),
        };
        if buf.is_null() || cap < alpha.len() {
            return fail(
                LwauStatus::LwauBufferTooSmall,
                format!("alpha needs {} doubles", alpha.len()),
            );
        }
        std::ptr::copy_nonoverlapping(alpha.as_ptr(), buf, alpha.len());
        LwauStatus::LwauOk
    })
}

/// Meta-iteration counter of the state; 0 for null.
///
/// # Safety
/// `state` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn lwau_state_iteration(state: *const LwauState) -> u64 {
    match state.as_ref() {
        Some(s) => match &s.inner {
            AnyState::F32(s) => s.iteration,
            AnyState::F64(s) => s.iteration,
        },
        None => 0,
    }
}

/// Releases a state handle.
///
/// # Safety
/// `state` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn lwau_state_free(state: *mut LwauState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

// ---- evaluation ---------------------------------------------------------------

/// Episodic evaluation of a state on a config-generated pool split. The
/// state's fingerprint must match the configuration.
///
/// # Safety
/// All handles live; `split` NUL-terminated; `result` valid.
#[no_mangle]
pub unsafe extern "C" fn lwau_evaluate(
    state: *const LwauState,
    cfg: *const LwauConfig,
    split: *const c_char,
    episodes: u32,
    steps: u32,
    freeze_below: u32,
    workers: u32,
    result: *mut LwauEvalResult,
) -> LwauStatus {
    guarded(|| {
        let (Some(state), Some(cfg)) = (state.as_ref(), cfg.as_ref()) else {
            return fail(LwauStatus::LwauNullPointer, "state or config handle is null");
        };
        if result.is_null() {
            return fail(LwauStatus::LwauNullPointer, "result pointer is null");
        }
        let split = match read_str(split, "split").and_then(|s| parse_split(s)) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let outcome = match (&state.inner, cfg.inner.precision) {
            (AnyState::F32(s), Precision::F32) => {
                evaluate_impl::<f32>(s, &cfg.inner, split, episodes, steps, freeze_below, workers)
            }
            (AnyState::F64(s), Precision::F64) => {
                evaluate_impl::<f64>(s, &cfg.inner, split, episodes, steps, freeze_below, workers)
            }
            _ => Err("state precision does not match the configuration".to_string()),
        };
        match outcome {
            Ok(out) => {
                *result = LwauEvalResult {
                    accuracy: out.accuracy,
                    half_width_95: out.half_width,
                    mean_adapt_seconds: out.mean_adapt_seconds,
                };
                LwauStatus::LwauOk
            }
            Err(message) => fail(LwauStatus::LwauRuntimeError, message),
        }
    })
}

fn evaluate_impl<T: Scalar>(
    state: &MetaState<T>,
    cfg: &RunConfig,
    split: Split,
    episodes: u32,
    steps: u32,
    freeze_below: u32,
    workers: u32,
) -> Result<lwau::meta::EvalOutcome, String> {
    if state.fingerprint != cfg.fingerprint() {
        return Err("checkpoint fingerprint does not match the configuration".to_string());
    }
    let spec = cfg.network_spec().map_err(|e| e.to_string())?;
    let params = cfg.train_params().map_err(|e| e.to_string())?;
    let (train, val, test) = cfg.build_pools::<T>().map_err(|e| e.to_string())?;
    let pool = pick(split, train, val, test);
    meta::evaluate(
        state,
        &spec,
        &pool,
        episodes as usize,
        steps as usize,
        freeze_below as usize,
        &params,
        &EvalRunOptions {
            timing_reps: 1,
            workers: workers.max(1) as usize,
        },
    )
    .map_err(|e| e.to_string())
}

/// Mean per-layer update proportions after test-time adaptation on a
/// config-generated split; fills one value per layer.
///
/// # Safety
/// Handles live; `split` NUL-terminated; `buf` holds `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn lwau_update_proportions(
    state: *const LwauState,
    cfg: *const LwauConfig,
    split: *const c_char,
    episodes: u32,
    steps: u32,
    buf: *mut f64,
    cap: usize,
) -> LwauStatus {
    guarded(|| {
        let (Some(state), Some(cfg)) = (state.as_ref(), cfg.as_ref()) else {
            return fail(LwauStatus::LwauNullPointer, "state or config handle is null");
        };
        let split = match read_str(split, "split").and_then(|s| parse_split(s)) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let proportions = match (&state.inner, cfg.inner.precision) {
            (AnyState::F32(s), Precision::F32) => {
                proportions_impl::<f32>(s, &cfg.inner, split, episodes, steps)
            }
            (AnyState::F64(s), Precision::F64) => {
                proportions_impl::<f64>(s, &cfg.inner, split, episodes, steps)
            }
            _ => Err("state precision does not match the configuration".to_string()),
        };
        match proportions {
            Ok(p) => {
                if buf.is_null() || cap < p.len() {
                    return fail(
                        LwauStatus::LwauBufferTooSmall,
                        format!("proportions need {} doubles", p.len()),
                    );
                }
                std::ptr::copy_nonoverlapping(p.as_ptr(), buf, p.len());
                LwauStatus::LwauOk
            }
            Err(message) => fail(LwauStatus::LwauRuntimeError, message),
        }
    })
}

fn proportions_impl<T: Scalar>(
    state: &MetaState<T>,
    cfg: &RunConfig,
    split: Split,
    episodes: u32,
    steps: u32,
) -> Result<Vec<f64>, String> {
    let spec = cfg.network_spec().map_err(|e| e.to_string())?;
    let params = cfg.train_params().map_err(|e| e.to_string())?;
    let (train, val, test) = cfg.build_pools::<T>().map_err(|e| e.to_string())?;
    let pool = pick(split, train, val, test);
    let report = probes::mean_update_proportions(
        &spec,
        &state.weights,
        &state.alpha,
        &pool,
        probes::ProbeTask {
            ways: params.ways,
            shots: params.shots,
            queries: params.queries,
        },
        episodes as usize,
        steps as usize,
        state.seed,
        params.mode_label(),
    )
    .map_err(|e| e.to_string())?;
    Ok(report.p)
}
