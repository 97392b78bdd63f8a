//! C interface to `funcpoly`.
//!
//! Every function returns an [`FpStatus`]; results are written through out
//! pointers. On failure a description is available from
//! [`fp_last_error_message`] on the same thread. Objects are opaque handles
//! released with their `_free` function; strings returned by the library are
//! released with [`fp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use funcpoly::bandwidth::{cross_validate, plugin_bandwidth, quadratic_variation};
use funcpoly::covariance::CovarianceModel;
use funcpoly::design::DesignGrid;
use funcpoly::kernels::{tableau, Kernel};
use funcpoly::locpoly::{curve_estimate, Bandwidth, FitSpec, FunctionalSample};
use funcpoly::simlab::{run_experiment, ExperimentConfig};
use funcpoly::Error;
use nalgebra::DMatrix;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownId = 3,
    /// Singular or rank-deficient local systems, too few points in a window.
    Numerical = 4,
    /// The requested quantity does not exist for the given inputs.
    NotAvailable = 5,
    Io = 6,
    Parse = 7,
    /// A simulation failed on too many replications.
    Simulation = 8,
    Panic = 9,
}

/// A set of n curves observed on a common grid.
pub struct FpSample {
    inner: FunctionalSample,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FpStatus {
    match e {
        Error::InvalidArgument(_) | Error::BadDensity { .. } | Error::WrongParity(_) => FpStatus::InvalidArgument,
        Error::UnknownId(_) => FpStatus::UnknownId,
        Error::SingularMoments { .. }
        | Error::RankDeficient { .. }
        | Error::BandwidthTooSmall { .. }
        | Error::NotPsd { .. }
        | Error::AllCandidatesInfeasible => FpStatus::Numerical,
        Error::AtPoint { source, .. } => status_of(source),
        Error::NotAvailable(_)
        | Error::VanishingDerivative { .. }
        | Error::ZeroCurvature(_)
        | Error::AlphaZero
        | Error::OptimalDensityInUse
        | Error::NotOptimizable(_)
        | Error::ConditionViolated { .. } => FpStatus::NotAvailable,
        Error::TooManyFailures { .. } => FpStatus::Simulation,
        Error::Io(_) => FpStatus::Io,
        Error::Parse(_) => FpStatus::Parse,
    }
}

fn guard<F: FnOnce() -> Result<(), FpStatus>>(f: F) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            FpStatus::Panic
        }
    }
}

fn fail(e: Error) -> FpStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> FpStatus {
    set_error(format!("null pointer: {what}"));
    FpStatus::NullPointer
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, FpStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(Error::Parse(format!("{what} is not valid UTF-8"))))
}

fn bandwidth(h: f64) -> Result<Bandwidth, FpStatus> {
    Bandwidth::from_value(h).map_err(fail)
}

fn out_string(s: String, out: *mut *mut c_char) -> Result<(), FpStatus> {
    let c = CString::new(s).map_err(|_| fail(Error::Parse("string contains NUL".into())))?;
    // SAFETY: caller guarantees `out` is valid (checked non-null by callers).
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message describing the last failure on this thread, or null. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn fp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a sample from `n_curves` rows of `n_points` values stored row by
/// row, observed at the strictly increasing points `grid` in [0, 1].
///
/// # Safety
/// `grid` must point to `n_points` doubles, `values` to
/// `n_curves * n_points` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fp_sample_new(
    grid: *const f64,
    n_points: usize,
    values: *const f64,
    n_curves: usize,
    out: *mut *mut FpSample,
) -> FpStatus {
    guard(|| {
        if grid.is_null() || values.is_null() || out.is_null() {
            return Err(null("grid, values or out"));
        }
        let pts = std::slice::from_raw_parts(grid, n_points).to_vec();
        let vals = std::slice::from_raw_parts(values, n_curves * n_points);
        let g = DesignGrid::new(pts, "custom").map_err(fail)?;
        let y = DMatrix::from_row_slice(n_curves, n_points, vals);
        let inner = FunctionalSample::new(g, y).map_err(fail)?;
        *out = Box::into_raw(Box::new(FpSample { inner }));
        Ok(())
    })
}

/// Reads a sample from a curve CSV file (`x,...` header, `curve_i,...` rows).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_sample_read_csv(path: *const c_char, out: *mut *mut FpSample) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = text(path, "path")?;
        let file = File::open(path).map_err(|e| fail(e.into()))?;
        let inner = FunctionalSample::read_csv(BufReader::new(file)).map_err(fail)?;
        *out = Box::into_raw(Box::new(FpSample { inner }));
        Ok(())
    })
}

/// Releases a sample.
///
/// # Safety
/// `sample` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fp_sample_free(sample: *mut FpSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Number of curves and grid points of a sample.
///
/// # Safety
/// `sample` must be a live handle; the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn fp_sample_shape(
    sample: *const FpSample,
    n_curves: *mut usize,
    n_points: *mut usize,
) -> FpStatus {
    guard(|| {
        if sample.is_null() || n_curves.is_null() || n_points.is_null() {
            return Err(null("sample or out"));
        }
        let s = &(*sample).inner;
        *n_curves = s.n_curves();
        *n_points = s.grid().len();
        Ok(())
    })
}

/// Local polynomial estimate of the `nu`-th derivative at `n_eval` points.
/// `h` is the bandwidth; pass `INFINITY` for the global polynomial fit.
///
/// # Safety
/// `sample` must be a live handle, `kernel` a NUL-terminated kernel id such
/// as `truncated-gaussian:1`, and `eval`, `out` must hold `n_eval` doubles.
#[no_mangle]
pub unsafe extern "C" fn fp_fit(
    sample: *const FpSample,
    p: usize,
    nu: usize,
    h: f64,
    kernel: *const c_char,
    eval: *const f64,
    n_eval: usize,
    out: *mut f64,
) -> FpStatus {
    guard(|| {
        if sample.is_null() || eval.is_null() || out.is_null() {
            return Err(null("sample, eval or out"));
        }
        let k: Kernel = text(kernel, "kernel")?.parse().map_err(fail)?;
        let spec = FitSpec::new(p, nu, bandwidth(h)?, k).map_err(fail)?;
        let pts = std::slice::from_raw_parts(eval, n_eval);
        let est = curve_estimate(&(*sample).inner, &spec, pts).map_err(fail)?;
        let dst = std::slice::from_raw_parts_mut(out, n_eval);
        for (d, (_, v)) in dst.iter_mut().zip(est) {
            *d = v;
        }
        Ok(())
    })
}

/// Leave-one-curve-out cross-validated bandwidth for the order-`p` fit of
/// the regression function. Writes `INFINITY` for the global fit.
///
/// # Safety
/// `sample` must be a live handle, `kernel` a NUL-terminated string and
/// `h_out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_cross_validate(
    sample: *const FpSample,
    p: usize,
    kernel: *const c_char,
    h_out: *mut f64,
) -> FpStatus {
    guard(|| {
        if sample.is_null() || h_out.is_null() {
            return Err(null("sample or h_out"));
        }
        let k: Kernel = text(kernel, "kernel")?.parse().map_err(fail)?;
        *h_out = cross_validate(&(*sample).inner, p, &k).map_err(fail)?.h.value();
        Ok(())
    })
}

/// Plug-in bandwidth for the `nu`-th derivative with a uniform weight.
///
/// # Safety
/// As for [`fp_cross_validate`].
#[no_mangle]
pub unsafe extern "C" fn fp_plugin_bandwidth(
    sample: *const FpSample,
    nu: usize,
    p: usize,
    kernel: *const c_char,
    h_out: *mut f64,
) -> FpStatus {
    guard(|| {
        if sample.is_null() || h_out.is_null() {
            return Err(null("sample or h_out"));
        }
        let k: Kernel = text(kernel, "kernel")?.parse().map_err(fail)?;
        *h_out = plugin_bandwidth(&(*sample).inner, nu, p, &k, &|_| 1.0)
            .map_err(fail)?
            .h
            .value();
        Ok(())
    })
}

/// Quadratic variation of the sample with a uniform weight.
///
/// # Safety
/// `sample` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_quadratic_variation(sample: *const FpSample, out: *mut f64) -> FpStatus {
    guard(|| {
        if sample.is_null() || out.is_null() {
            return Err(null("sample or out"));
        }
        *out = quadratic_variation(&(*sample).inner, &|_| 1.0);
        Ok(())
    })
}

/// Jump of the first partial derivative of a covariance model across the
/// diagonal at `x`.
///
/// # Safety
/// `model` must be a NUL-terminated id such as `ou:15`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_covariance_alpha(model: *const c_char, x: f64, out: *mut f64) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m: CovarianceModel = text(model, "model")?.parse().map_err(fail)?;
        *out = m.alpha(x).map_err(fail)?;
        Ok(())
    })
}

/// Kernel tableau of order `p` as a JSON string.
///
/// # Safety
/// `kernel` must be a NUL-terminated string and `out` writable. Free the
/// result with [`fp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fp_kernel_tableau_json(kernel: *const c_char, p: usize, out: *mut *mut c_char) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let k: Kernel = text(kernel, "kernel")?.parse().map_err(fail)?;
        let t = tableau(&k, p).map_err(fail)?;
        let json = serde_json::to_string(&t.summary()).map_err(|e| fail(e.into()))?;
        out_string(json, out)
    })
}

/// Runs a simulation experiment from a JSON config and returns the report
/// as JSON. `workers` = 0 uses the default thread count.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable. Free
/// the result with [`fp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fp_experiment_run_json(
    config_json: *const c_char,
    workers: usize,
    out: *mut *mut c_char,
) -> FpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: ExperimentConfig =
            serde_json::from_str(text(config_json, "config")?).map_err(|e| fail(e.into()))?;
        let report = run_experiment(&cfg, (workers > 0).then_some(workers)).map_err(fail)?;
        let json = serde_json::to_string(&report).map_err(|e| fail(e.into()))?;
        out_string(json, out)
    })
}
