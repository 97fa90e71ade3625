// SPDX-License-Identifier: MIT OR Apache-2.0

//! C interface to `ingarch-cpt`.
//!
//! Every fallible function returns a [`CptStatus`]. On failure the message is
//! kept per thread and can be read with [`cpt_last_error_message`]. Handles
//! are opaque and must be released with the matching `_free` function.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ingarch_cpt::cpt::{Critical, Trim};
use ingarch_cpt::critval::{self, QuantileConfig};
use ingarch_cpt::likelihood;
use ingarch_cpt::{
    fit, run_test, simulate_h0, simulate_h1, CptError, FitOptions, ModelSpec, Segment, TestOptions,
    TestReport, WeightFn,
};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Data or model error: support, parse, degenerate segment, failed fit.
    Data = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// A parsed model specification.
pub struct CptModel {
    spec: ModelSpec,
}

/// Options for [`cpt_run_test`].
pub struct CptTestOptions {
    alpha: f64,
    weight: WeightFn,
    un: Trim,
    vn: Trim,
    critical_value: Option<f64>,
    paths: usize,
    grid: usize,
    seed: u64,
}

impl Default for CptTestOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            weight: WeightFn::One,
            un: Trim::Auto,
            vn: Trim::Auto,
            critical_value: None,
            paths: critval::DEFAULT_PATHS,
            grid: critval::DEFAULT_GRID,
            seed: critval::DEFAULT_SEED,
        }
    }
}

/// Result of [`cpt_run_test`].
pub struct CptReport {
    report: TestReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: CptStatus, msg: impl Into<String>) -> CptStatus {
    set_error(msg);
    status
}

fn from_error(e: CptError) -> CptStatus {
    let status = if e.is_data_error() {
        CptStatus::Data
    } else {
        CptStatus::InvalidArgument
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> CptStatus) -> CptStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(CptStatus::Panic, format!("panic: {msg}"))
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(CptStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn slice_or_empty<'a, T>(p: *const T, len: usize) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        slice::from_raw_parts(p, len)
    }
}

/// Message for the last failure on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn cpt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a model such as `nb-ingarch:r=8`.
#[no_mangle]
pub unsafe extern "C" fn cpt_model_new(spec: *const c_char, out: *mut *mut CptModel) -> CptStatus {
    guard(|| {
        non_null!(spec, out);
        let s = match CStr::from_ptr(spec).to_str() {
            Ok(s) => s,
            Err(_) => return fail(CptStatus::InvalidArgument, "model spec is not UTF-8"),
        };
        match s.parse::<ModelSpec>() {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(CptModel { spec }));
                CptStatus::Ok
            }
            Err(e) => fail(CptStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpt_model_free(model: *mut CptModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cpt_model_dim(model: *const CptModel) -> usize {
    model.as_ref().map_or(0, |m| m.spec.dim())
}

/// Conditional log-likelihood of `y[start-1..end]` (1-based, inclusive)
/// with the filter started at the segment mean.
#[no_mangle]
pub unsafe extern "C" fn cpt_loglik(
    model: *const CptModel,
    theta: *const f64,
    theta_len: usize,
    y: *const u64,
    n: usize,
    start: usize,
    end: usize,
    out: *mut f64,
) -> CptStatus {
    guard(|| {
        non_null!(model, theta, y, out);
        let spec = &(*model).spec;
        let theta = slice_or_empty(theta, theta_len);
        let y = slice_or_empty(y, n);
        if start == 0 || start > end || end > n {
            return fail(CptStatus::InvalidArgument, "segment bounds out of range");
        }
        let seg = match Segment::with_default_init(spec, y, start, end) {
            Ok(s) => s,
            Err(e) => return from_error(e),
        };
        match likelihood::loglik(spec, theta, &seg) {
            Ok(v) => {
                *out = v;
                CptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Maximum likelihood fit on `y[start-1..end]`. Writes `dim` values to
/// `theta_out`; `loglik_out` and `converged_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn cpt_fit(
    model: *const CptModel,
    y: *const u64,
    n: usize,
    start: usize,
    end: usize,
    theta_out: *mut f64,
    theta_len: usize,
    loglik_out: *mut f64,
    converged_out: *mut bool,
) -> CptStatus {
    guard(|| {
        non_null!(model, y, theta_out);
        let spec = &(*model).spec;
        if theta_len < spec.dim() {
            return fail(
                CptStatus::BufferTooSmall,
                format!("theta_out needs {} slots", spec.dim()),
            );
        }
        let y = slice_or_empty(y, n);
        match fit(spec, y, start, end, &FitOptions::default()) {
            Ok(r) => {
                ptr::copy_nonoverlapping(r.theta.as_ptr(), theta_out, r.theta.len());
                if !loglik_out.is_null() {
                    *loglik_out = r.loglik;
                }
                if !converged_out.is_null() {
                    *converged_out = r.converged;
                }
                CptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Simulates `n` counts into `y_out`. With `theta_after` non-null, the
/// parameter switches after index `change_at` (1-based).
#[no_mangle]
pub unsafe extern "C" fn cpt_simulate(
    model: *const CptModel,
    theta: *const f64,
    theta_after: *const f64,
    theta_len: usize,
    n: usize,
    change_at: usize,
    burn_in: usize,
    seed: u64,
    y_out: *mut u64,
) -> CptStatus {
    guard(|| {
        non_null!(model, theta, y_out);
        let spec = &(*model).spec;
        let t0 = slice_or_empty(theta, theta_len);
        let traj = if theta_after.is_null() {
            simulate_h0(spec, t0, n, burn_in, seed)
        } else {
            let t1 = slice_or_empty(theta_after, theta_len);
            simulate_h1(spec, t0, t1, n, change_at, burn_in, seed)
        };
        match traj {
            Ok(t) => {
                ptr::copy_nonoverlapping(t.y.as_ptr(), y_out, t.y.len());
                CptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// `c_α` for dimension `d` and weight `(τ(1−τ))^gamma` (`gamma = 0` gives `q ≡ 1`).
/// Not cached.
#[no_mangle]
pub unsafe extern "C" fn cpt_critical_value(
    d: usize,
    gamma: f64,
    alpha: f64,
    paths: usize,
    grid: usize,
    seed: u64,
    out: *mut f64,
) -> CptStatus {
    guard(|| {
        non_null!(out);
        let cfg = QuantileConfig {
            paths,
            grid,
            seed,
            ..QuantileConfig::new(d, weight_from(gamma))
        };
        match critval::quantile(&cfg, alpha) {
            Ok(c) => {
                *out = c;
                CptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

fn weight_from(gamma: f64) -> WeightFn {
    if gamma == 0.0 {
        WeightFn::One
    } else {
        WeightFn::Power { gamma }
    }
}

/// Defaults: α = 0.05, `q ≡ 1`, automatic trimming, simulated critical value.
#[no_mangle]
pub extern "C" fn cpt_test_options_new() -> *mut CptTestOptions {
    Box::into_raw(Box::new(CptTestOptions::default()))
}

#[no_mangle]
pub unsafe extern "C" fn cpt_test_options_free(opts: *mut CptTestOptions) {
    if !opts.is_null() {
        drop(Box::from_raw(opts));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cpt_test_options_set_alpha(
    opts: *mut CptTestOptions,
    alpha: f64,
) -> CptStatus {
    guard(|| {
        non_null!(opts);
        if !(alpha > 0.0 && alpha < 1.0) {
            return fail(CptStatus::InvalidArgument, "alpha must lie in (0, 1)");
        }
        (*opts).alpha = alpha;
        CptStatus::Ok
    })
}

/// `gamma = 0` selects `q ≡ 1`.
#[no_mangle]
pub unsafe extern "C" fn cpt_test_options_set_weight(
    opts: *mut CptTestOptions,
    gamma: f64,
) -> CptStatus {
    guard(|| {
        non_null!(opts);
        let w = weight_from(gamma);
        if !w.admissible() {
            return fail(CptStatus::InvalidArgument, "gamma must lie in [0, 0.5)");
        }
        (*opts).weight = w;
        CptStatus::Ok
    })
}

/// Trimming windows; 0 means automatic.
#[no_mangle]
pub unsafe extern "C" fn cpt_test_options_set_trim(
    opts: *mut CptTestOptions,
    un: usize,
    vn: usize,
) -> CptStatus {
    guard(|| {
        non_null!(opts);
        let t = |v: usize| if v == 0 { Trim::Auto } else { Trim::Fixed(v) };
        (*opts).un = t(un);
        (*opts).vn = t(vn);
        CptStatus::Ok
    })
}

/// Fixed critical value; a negative value restores simulation.
#[no_mangle]
pub unsafe extern "C" fn cpt_test_options_set_critical_value(
    opts: *mut CptTestOptions,
    c: f64,
) -> CptStatus {
    guard(|| {
        non_null!(opts);
        (*opts).critical_value = if c < 0.0 { None } else { Some(c) };
        CptStatus::Ok
    })
}

/// Monte Carlo settings for a simulated critical value.
#[no_mangle]
pub unsafe extern "C" fn cpt_test_options_set_simulation(
    opts: *mut CptTestOptions,
    paths: usize,
    grid: usize,
    seed: u64,
) -> CptStatus {
    guard(|| {
        non_null!(opts);
        (*opts).paths = paths;
        (*opts).grid = grid;
        (*opts).seed = seed;
        CptStatus::Ok
    })
}

/// Runs the test. `opts` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn cpt_run_test(
    model: *const CptModel,
    y: *const u64,
    n: usize,
    opts: *const CptTestOptions,
    out: *mut *mut CptReport,
) -> CptStatus {
    guard(|| {
        non_null!(model, y, out);
        let spec = &(*model).spec;
        let defaults = CptTestOptions::default();
        let o = opts.as_ref().unwrap_or(&defaults);
        let critical = match o.critical_value {
            Some(c) => Critical::Value(c),
            None => Critical::Simulate {
                config: QuantileConfig {
                    paths: o.paths,
                    grid: o.grid,
                    seed: o.seed,
                    ..QuantileConfig::new(spec.dim(), o.weight)
                },
                cache: ingarch_cpt::QuantileCache::at(critval::resolve_cache_dir(None)),
            },
        };
        let topts = TestOptions {
            alpha: o.alpha,
            weight: o.weight,
            un: o.un,
            vn: o.vn,
            critical: Some(critical),
            ..TestOptions::default()
        };
        match run_test(spec, slice_or_empty(y, n), &topts) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(CptReport { report }));
                CptStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpt_report_free(report: *mut CptReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cpt_report_statistic(report: *const CptReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.statistic)
}

#[no_mangle]
pub unsafe extern "C" fn cpt_report_critical_value(report: *const CptReport) -> f64 {
    report
        .as_ref()
        .map_or(f64::NAN, |r| r.report.critical_value)
}

/// Estimated change point (1-based), or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cpt_report_t_hat(report: *const CptReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.t_hat)
}

#[no_mangle]
pub unsafe extern "C" fn cpt_report_reject(report: *const CptReport) -> bool {
    report.as_ref().is_some_and(|r| r.report.reject)
}

#[no_mangle]
pub unsafe extern "C" fn cpt_report_curve_len(report: *const CptReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.curve.len())
}

/// Copies the curve; invalid points are written as NaN.
#[no_mangle]
pub unsafe extern "C" fn cpt_report_curve(
    report: *const CptReport,
    k_out: *mut usize,
    value_out: *mut f64,
    len: usize,
) -> CptStatus {
    guard(|| {
        non_null!(report, k_out, value_out);
        let curve = &(*report).report.curve;
        if len < curve.len() {
            return fail(
                CptStatus::BufferTooSmall,
                format!("curve has {} points", curve.len()),
            );
        }
        for (i, p) in curve.iter().enumerate() {
            *k_out.add(i) = p.k;
            *value_out.add(i) = p.value.unwrap_or(f64::NAN);
        }
        CptStatus::Ok
    })
}

/// Report as JSON; release with [`cpt_string_free`]. Null on failure.
#[no_mangle]
pub unsafe extern "C" fn cpt_report_to_json(report: *const CptReport) -> *mut c_char {
    let mut result = ptr::null_mut();
    let status = guard(|| {
        non_null!(report);
        match ingarch_cpt::io::report_json(&(*report).report) {
            Ok(s) => match CString::new(s) {
                Ok(c) => {
                    result = c.into_raw();
                    CptStatus::Ok
                }
                Err(e) => fail(CptStatus::Data, e.to_string()),
            },
            Err(e) => from_error(e),
        }
    });
    if status == CptStatus::Ok {
        result
    } else {
        ptr::null_mut()
    }
}

#[no_mangle]
pub unsafe extern "C" fn cpt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
