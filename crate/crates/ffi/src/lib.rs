//! C interface to the u1qa engine.
//!
//! Every function returns a [`U1qaStatus`]; on failure the message is kept
//! per thread and read with [`u1qa_last_error`]. Handles are opaque and
//! released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use u1qa::check::{default_suite, oracle_check};
use u1qa::lattice::ln_binomial;
use u1qa::observables::{ExperimentConfig, TimeSeries};
use u1qa::runner::{plan, run_point, Observable, RunManifest, VERSION};
use u1qa::scaling::psapprox;
use u1qa::Error;

/// Status codes. Configuration and invariant failures match the exit
/// codes of the command line driver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum U1qaStatus {
    Ok = 0,
    Config = 2,
    Invariant = 3,
    Domain = 4,
    Fit = 5,
    Parse = 6,
    Io = 7,
    NullArgument = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// One validated experiment point together with its observable.
pub struct U1qaConfig {
    observable: Observable,
    config: ExperimentConfig,
}

/// The series produced by one run; correlation runs hold one per offset.
pub struct U1qaSeries {
    series: Vec<(Option<i64>, TimeSeries)>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn status_of(e: &Error) -> U1qaStatus {
    match e {
        Error::Config { .. } => U1qaStatus::Config,
        Error::Invariant(_) => U1qaStatus::Invariant,
        Error::Domain(_) => U1qaStatus::Domain,
        Error::Fit(_) => U1qaStatus::Fit,
        Error::Parse(_) => U1qaStatus::Parse,
        Error::Io(_) => U1qaStatus::Io,
    }
}

enum Fail {
    Engine(Error),
    Null(&'static str),
    Range(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> U1qaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            U1qaStatus::Ok
        }
        Ok(Err(Fail::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("null pointer passed as `{name}`"));
            U1qaStatus::NullArgument
        }
        Ok(Err(Fail::Range(msg))) => {
            set_error(msg);
            U1qaStatus::OutOfRange
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            U1qaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::Engine(Error::Parse(format!("`{name}` is not UTF-8: {e}"))))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn u1qa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, including the git description at build time.
#[no_mangle]
pub extern "C" fn u1qa_version() -> *const c_char {
    static V: OnceLock<CString> = OnceLock::new();
    V.get_or_init(|| CString::new(VERSION).expect("no interior nul")).as_ptr()
}

/// Number of sweep points of a TOML manifest for the named observable.
///
/// # Safety
/// `manifest` and `observable` are nul-terminated strings; `n_points` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn u1qa_manifest_points(
    manifest: *const c_char,
    observable: *const c_char,
    n_points: *mut usize,
) -> U1qaStatus {
    guard(|| {
        let m = RunManifest::from_toml(str_arg(manifest, "manifest")?)?;
        let obs: Observable = str_arg(observable, "observable")?.parse()?;
        *out_arg(n_points, "n_points")? = plan(&m, obs)?.len();
        Ok(())
    })
}

/// Build the validated config of sweep point `index` of a TOML manifest.
///
/// # Safety
/// String arguments are nul-terminated; `out` is writable. The handle is
/// released with [`u1qa_config_free`].
#[no_mangle]
pub unsafe extern "C" fn u1qa_config_from_toml(
    manifest: *const c_char,
    observable: *const c_char,
    index: usize,
    out: *mut *mut U1qaConfig,
) -> U1qaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = RunManifest::from_toml(str_arg(manifest, "manifest")?)?;
        let observable: Observable = str_arg(observable, "observable")?.parse()?;
        let mut points = plan(&m, observable)?;
        if index >= points.len() {
            return Err(Fail::Range(format!("point {index} of {}", points.len())));
        }
        let config = points.swap_remove(index).config;
        *out = Box::into_raw(Box::new(U1qaConfig { observable, config }));
        Ok(())
    })
}

/// Replace the seed of a config.
///
/// # Safety
/// `config` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn u1qa_config_set_seed(config: *mut U1qaConfig, seed: u64) -> U1qaStatus {
    guard(|| {
        out_arg(config, "config")?.config.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn u1qa_config_free(config: *mut U1qaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the estimator of `config` on the calling thread's pool.
///
/// # Safety
/// `config` is a live handle; `out` is writable. The result is released
/// with [`u1qa_series_free`].
#[no_mangle]
pub unsafe extern "C" fn u1qa_run(config: *const U1qaConfig, out: *mut *mut U1qaSeries) -> U1qaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let c = ref_arg(config, "config")?;
        let series = run_point(c.observable, &c.config)?;
        *out = Box::into_raw(Box::new(U1qaSeries { series }));
        Ok(())
    })
}

/// # Safety
/// `series` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn u1qa_series_free(series: *mut U1qaSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Number of series in a result (one per correlation offset, else 1).
///
/// # Safety
/// `series` is a live handle; `count` is writable.
#[no_mangle]
pub unsafe extern "C" fn u1qa_series_count(series: *const U1qaSeries, count: *mut usize) -> U1qaStatus {
    guard(|| {
        *out_arg(count, "count")? = ref_arg(series, "series")?.series.len();
        Ok(())
    })
}

unsafe fn pick<'a>(series: *const U1qaSeries, k: usize) -> Result<&'a (Option<i64>, TimeSeries), Fail> {
    let s = ref_arg(series, "series")?;
    s.series
        .get(k)
        .ok_or_else(|| Fail::Range(format!("series {k} of {}", s.series.len())))
}

/// Number of recorded times of series `k`, and its correlation offset
/// (0 for other observables). `offset` may be null.
///
/// # Safety
/// `series` is a live handle; `len` is writable.
#[no_mangle]
pub unsafe extern "C" fn u1qa_series_len(
    series: *const U1qaSeries,
    k: usize,
    len: *mut usize,
    offset: *mut i64,
) -> U1qaStatus {
    guard(|| {
        let (x, s) = pick(series, k)?;
        *out_arg(len, "len")? = s.len();
        if let Some(o) = offset.as_mut() {
            *o = x.unwrap_or(0);
        }
        Ok(())
    })
}

/// Copy series `k` into caller buffers of `capacity` entries each. Any
/// buffer may be null. Masked points carry NaN in `mean` and `stderr`.
///
/// # Safety
/// Non-null buffers hold at least `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn u1qa_series_copy(
    series: *const U1qaSeries,
    k: usize,
    times: *mut u64,
    mean: *mut f64,
    stderr: *mut f64,
    n_valid: *mut u64,
    capacity: usize,
) -> U1qaStatus {
    guard(|| {
        let (_, s) = pick(series, k)?;
        if capacity < s.len() {
            return Err(Fail::Range(format!("capacity {capacity} < length {}", s.len())));
        }
        let n = s.len();
        if !times.is_null() {
            ptr::copy_nonoverlapping(s.times.as_ptr(), times, n);
        }
        if !mean.is_null() {
            ptr::copy_nonoverlapping(s.mean.as_ptr(), mean, n);
        }
        if !stderr.is_null() {
            ptr::copy_nonoverlapping(s.stderr.as_ptr(), stderr, n);
        }
        if !n_valid.is_null() {
            for (i, &v) in s.n_valid.iter().enumerate() {
                *n_valid.add(i) = v;
            }
        }
        Ok(())
    })
}

/// Series `k` in the CSV format of the command line driver. The string is
/// released with [`u1qa_string_free`].
///
/// # Safety
/// `series` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn u1qa_series_csv(series: *const U1qaSeries, k: usize, out: *mut *mut c_char) -> U1qaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let (_, s) = pick(series, k)?;
        *out = CString::new(s.to_csv()).expect("csv has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn u1qa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `ln C(n, k)`.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn u1qa_ln_binomial(n: u64, k: u64, out: *mut f64) -> U1qaStatus {
    guard(|| {
        if k > n {
            return Err(Error::Domain(format!("k = {k} exceeds n = {n}")).into());
        }
        *out_arg(out, "out")? = ln_binomial(n, k);
        Ok(())
    })
}

/// Exact and approximate value of `−2 ln[C(L−2Δl, νL) / C(L, νL)]`.
///
/// # Safety
/// `exact` and `approx` are writable.
#[no_mangle]
pub unsafe extern "C" fn u1qa_psapprox(l: u64, dl: u64, nu: f64, exact: *mut f64, approx: *mut f64) -> U1qaStatus {
    guard(|| {
        let (e, a) = psapprox(l, dl, nu)?;
        *out_arg(exact, "exact")? = e;
        *out_arg(approx, "approx")? = a;
        Ok(())
    })
}

/// Run the cross-engine equivalence suite and report the largest purity
/// deviation.
///
/// # Safety
/// `max_deviation` is writable.
#[no_mangle]
pub unsafe extern "C" fn u1qa_oracle_check(
    mixed_l: usize,
    fixed_l: usize,
    realizations: usize,
    t_max: usize,
    seed: u64,
    max_deviation: *mut f64,
) -> U1qaStatus {
    guard(|| {
        let out = out_arg(max_deviation, "max_deviation")?;
        *out = oracle_check(&default_suite(mixed_l, fixed_l), realizations, t_max, seed)?.max_deviation;
        Ok(())
    })
}
