//! C ABI over `rag_importance`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns an [`RiStatus`];
//! on failure a message is available from [`ri_last_error_message`] on the
//! same thread. Panics are caught and reported as `RI_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rag_importance::approx::approx_gradient;
use rag_importance::corpus::{load_evaluation_set, parse_evaluation_set, save_evaluation_set};
use rag_importance::exact_grad::gradient;
use rag_importance::refine::{evaluate, prune, reweight_expected_accuracy, tune_threshold};
use rag_importance::trainer::{fit, TrainConfig};
use rag_importance::{Error, EvaluationSet, GradientVector, SourceWeights};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Invalid = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// A loaded evaluation set.
pub struct RiEvalSet(EvaluationSet);

/// Per-source weights.
pub struct RiWeights {
    inner: SourceWeights,
    keys: Vec<CString>,
}

/// A gradient vector keyed by point id.
pub struct RiGradient {
    values: Vec<f64>,
    keys: Vec<CString>,
}

/// Training parameters; obtain defaults from [`ri_fit_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiFitConfig {
    pub k: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub init_weight: f64,
    pub eps: f64,
    pub seed: u64,
}

impl From<RiFitConfig> for TrainConfig {
    fn from(c: RiFitConfig) -> Self {
        TrainConfig {
            k: c.k,
            iterations: c.iterations,
            learning_rate: c.learning_rate,
            init_weight: c.init_weight,
            eps: c.eps,
            seed: c.seed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(RiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_io() { RiStatus::Io } else { RiStatus::Invalid };
        Failure(code, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RiStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            RiStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RiStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RiStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

fn c_keys<'a>(keys: impl IntoIterator<Item = &'a String>) -> Vec<CString> {
    keys.into_iter()
        .map(|k| CString::new(k.replace('\0', " ")).unwrap_or_default())
        .collect()
}

fn weights_handle(inner: SourceWeights) -> *mut RiWeights {
    let keys = c_keys(inner.keys());
    Box::into_raw(Box::new(RiWeights { inner, keys }))
}

fn gradient_handle(g: GradientVector) -> *mut RiGradient {
    Box::into_raw(Box::new(RiGradient {
        keys: c_keys(&g.keys),
        values: g.values,
    }))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ri_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads an evaluation set from a line-delimited JSON file.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ri_eval_set_load(path: *const c_char, out: *mut *mut RiEvalSet) -> RiStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let set = load_evaluation_set(path)?;
        write_out(out, Box::into_raw(Box::new(RiEvalSet(set))))
    })
}

/// Parses an evaluation set from line-delimited JSON text.
///
/// # Safety
/// `text` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ri_eval_set_parse(text: *const c_char, out: *mut *mut RiEvalSet) -> RiStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let set = parse_evaluation_set(text.as_bytes())?;
        write_out(out, Box::into_raw(Box::new(RiEvalSet(set))))
    })
}

/// Writes an evaluation set as line-delimited JSON.
///
/// # Safety
/// `set` must come from this library; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ri_eval_set_save(set: *const RiEvalSet, path: *const c_char) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        save_evaluation_set(&set.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of instances, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ri_eval_set_len(set: *const RiEvalSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Number of distinct sources, or 0 for a null handle.
///
/// # Safety
/// `set` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ri_eval_set_num_sources(set: *const RiEvalSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.sources().len())
}

/// # Safety
/// `set` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ri_eval_set_free(set: *mut RiEvalSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// The default training configuration.
#[no_mangle]
pub extern "C" fn ri_fit_config_default() -> RiFitConfig {
    let c = TrainConfig::default();
    RiFitConfig {
        k: c.k,
        iterations: c.iterations,
        learning_rate: c.learning_rate,
        init_weight: c.init_weight,
        eps: c.eps,
        seed: c.seed,
    }
}

/// Learns source weights. A null `config` means the defaults.
///
/// # Safety
/// Pointers must be null (config only) or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_fit(
    set: *const RiEvalSet,
    config: *const RiFitConfig,
    out: *mut *mut RiWeights,
) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let cfg = config.as_ref().copied().unwrap_or_else(|| ri_fit_config_default());
        let r = fit(&set.0, &cfg.into())?;
        write_out(out, weights_handle(r.weights))
    })
}

/// Every source of `set` at weight `w`.
///
/// # Safety
/// `set` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_weights_uniform(set: *const RiEvalSet, w: f64, out: *mut *mut RiWeights) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        write_out(out, weights_handle(SourceWeights::uniform(&set.0, w)?))
    })
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_weights_load(path: *const c_char, out: *mut *mut RiWeights) -> RiStatus {
    guard(|| {
        let w = SourceWeights::load(str_arg(path, "path")?)?;
        write_out(out, weights_handle(w))
    })
}

/// # Safety
/// `weights` must come from this library; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ri_weights_save(weights: *const RiWeights, path: *const c_char) -> RiStatus {
    guard(|| {
        let w = ref_arg(weights, "weights")?;
        w.inner.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of sources, or 0 for a null handle.
///
/// # Safety
/// `weights` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ri_weights_len(weights: *const RiWeights) -> usize {
    weights.as_ref().map_or(0, |w| w.keys.len())
}

/// Source key and weight at `index`. The key stays valid while `weights` lives.
///
/// # Safety
/// `weights` must come from this library; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_weights_entry(
    weights: *const RiWeights,
    index: usize,
    key: *mut *const c_char,
    value: *mut f64,
) -> RiStatus {
    guard(|| {
        let w = ref_arg(weights, "weights")?;
        let k = w
            .keys
            .get(index)
            .ok_or_else(|| Failure(RiStatus::OutOfRange, format!("index {index} out of range")))?;
        write_out(key, k.as_ptr())?;
        write_out(value, w.inner.weights()[index])
    })
}

/// Weight of the named source.
///
/// # Safety
/// `weights` must come from this library, `source` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ri_weights_get(weights: *const RiWeights, source: *const c_char, value: *mut f64) -> RiStatus {
    guard(|| {
        let w = ref_arg(weights, "weights")?;
        let key = str_arg(source, "source")?;
        let v = w
            .inner
            .get(key)
            .ok_or_else(|| Failure(RiStatus::OutOfRange, format!("unknown source {key:?}")))?;
        write_out(value, v)
    })
}

/// # Safety
/// `weights` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ri_weights_free(weights: *mut RiWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

/// Per-point gradient of the expected utility. `eps <= 0` computes it
/// exactly; otherwise the ranking is truncated for that ε.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_gradient(
    set: *const RiEvalSet,
    weights: *const RiWeights,
    k: usize,
    eps: f64,
    out: *mut *mut RiGradient,
) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let w = ref_arg(weights, "weights")?;
        let g = if eps > 0.0 {
            approx_gradient(&set.0, &w.inner, k, eps)?
        } else {
            gradient(&set.0, &w.inner, k)?
        };
        write_out(out, gradient_handle(g))
    })
}

/// # Safety
/// `g` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ri_gradient_len(g: *const RiGradient) -> usize {
    g.as_ref().map_or(0, |g| g.values.len())
}

/// Contiguous gradient values, valid while `g` lives; null for a null handle.
///
/// # Safety
/// `g` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ri_gradient_values(g: *const RiGradient) -> *const f64 {
    g.as_ref().map_or(ptr::null(), |g| g.values.as_ptr())
}

/// Point id at `index`, valid while `g` lives; null when out of range.
///
/// # Safety
/// `g` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ri_gradient_key(g: *const RiGradient, index: usize) -> *const c_char {
    g.as_ref()
        .and_then(|g| g.keys.get(index))
        .map_or(ptr::null(), |k| k.as_ptr())
}

/// # Safety
/// `g` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ri_gradient_free(g: *mut RiGradient) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Copy of `set` without candidates whose source weight is below `threshold`.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_prune(
    set: *const RiEvalSet,
    weights: *const RiWeights,
    threshold: f64,
    out: *mut *mut RiEvalSet,
) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let w = ref_arg(weights, "weights")?;
        let pruned = prune(&set.0, &w.inner, threshold)?;
        write_out(out, Box::into_raw(Box::new(RiEvalSet(pruned))))
    })
}

/// Pruning threshold that maximizes accuracy on `set`.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_tune_threshold(
    set: *const RiEvalSet,
    weights: *const RiWeights,
    k: usize,
    out: *mut f64,
) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let w = ref_arg(weights, "weights")?;
        write_out(out, tune_threshold(&set.0, &w.inner, k)?)
    })
}

/// Expected majority-vote accuracy when candidates are kept with their
/// source's weight, over `samples` seeded draws.
///
/// # Safety
/// Handles must come from this library; `accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_reweight(
    set: *const RiEvalSet,
    weights: *const RiWeights,
    k: usize,
    samples: usize,
    seed: u64,
    accuracy: *mut f64,
) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let w = ref_arg(weights, "weights")?;
        let r = reweight_expected_accuracy(&set.0, &w.inner, samples, seed, k)?;
        write_out(accuracy, r.accuracy)
    })
}

/// Majority-vote accuracy over the top-`k` candidates.
///
/// # Safety
/// `set` must come from this library; `accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ri_evaluate(set: *const RiEvalSet, k: usize, accuracy: *mut f64) -> RiStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        write_out(accuracy, evaluate(&set.0, k)?.accuracy)
    })
}
