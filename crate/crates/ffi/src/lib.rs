//! C ABI for gradedgeo.
//!
//! Problems are opaque handles created from a catalog name and JSON
//! parameters. Every fallible call returns a [`GgStatus`]; on failure the
//! message is available from [`gg_last_error`] on the same thread. Strings
//! returned through out-pointers are owned by the caller and released with
//! [`gg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gradedgeo::catalog::catalog_problem;
use gradedgeo::cli;
use gradedgeo::geodesic::{connect, ShootingConfig};
use gradedgeo::linalg::{Matrix, Vector};
use gradedgeo::ode::OdeOptions;
use gradedgeo::problem::ChartedProblem;
use gradedgeo::ricci::{ricci_nongeodesic_report, RicciConfig};
use gradedgeo::spd::{SpdKind, SpdMetricSpace};
use gradedgeo::variational::{finsler_distance, DistanceOptions};
use gradedgeo::GeoError;

/// Status codes; the numeric values match the CLI exit codes where they
/// overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GgStatus {
    Ok = 0,
    CheckFailed = 1,
    InvalidArgument = 2,
    NumericalFailure = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Opaque problem handle.
pub struct GgProblem {
    inner: ChartedProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(GgStatus, String);

impl From<GeoError> for Failure {
    fn from(e: GeoError) -> Self {
        let status = if e.is_numerical() {
            GgStatus::NumericalFailure
        } else {
            GgStatus::InvalidArgument
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<GgStatus, Failure>) -> GgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            s
        }
        Ok(Err(Failure(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            GgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn json_arg(p: *const c_char, what: &str) -> Result<serde_json::Value, Failure> {
    if p.is_null() {
        return Ok(serde_json::Value::Null);
    }
    let s = str_arg(p, what)?;
    serde_json::from_str(s).map_err(|e| Failure(GgStatus::InvalidArgument, format!("{what}: {e}")))
}

unsafe fn problem_arg<'a>(p: *const GgProblem) -> Result<&'a ChartedProblem, Failure> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("problem"))
}

unsafe fn vec_arg(p: *const f64, len: usize, what: &str) -> Result<Vector, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(Vector::from_column_slice(std::slice::from_raw_parts(p, len)))
}

unsafe fn write_out(out: *mut f64, v: &Vector) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(v.as_slice());
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output string"));
    }
    let c = CString::new(s).map_err(|_| Failure(GgStatus::Panic, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn check_dim(p: &ChartedProblem, dim: usize) -> Result<(), Failure> {
    if dim != p.dim() {
        return Err(GeoError::DimensionMismatch { expected: p.dim(), got: dim }.into());
    }
    Ok(())
}

fn opts(rtol: f64, atol: f64) -> OdeOptions {
    if rtol > 0.0 && atol > 0.0 {
        OdeOptions::with_tolerances(rtol, atol)
    } else {
        OdeOptions::default()
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn gg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn gg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a catalog problem. `params_json` may be NULL for defaults.
///
/// # Safety
/// `name` and `params_json` must be NUL-terminated strings or NULL;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gg_problem_new(name: *const c_char, params_json: *const c_char, out: *mut *mut GgProblem) -> GgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let params = json_arg(params_json, "params")?;
        let inner = catalog_problem(name, &params)?;
        *out = Box::into_raw(Box::new(GgProblem { inner }));
        Ok(GgStatus::Ok)
    })
}

/// Releases a problem. NULL is ignored.
///
/// # Safety
/// `p` must come from [`gg_problem_new`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn gg_problem_free(p: *mut GgProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Coordinate dimension, or 0 for NULL.
///
/// # Safety
/// `p` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn gg_problem_dim(p: *const GgProblem) -> usize {
    p.as_ref().map_or(0, |h| h.inner.dim())
}

/// Number of levels, or 0 for NULL.
///
/// # Safety
/// `p` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn gg_problem_levels(p: *const GgProblem) -> usize {
    p.as_ref().map_or(0, |h| h.inner.levels())
}

/// `exp_x(v)` through the problem's atlas. Writes the point (`dim` values)
/// and the index of the chart it is expressed in. Non-positive tolerances
/// select the defaults.
///
/// # Safety
/// `x`, `v` and `out_point` must hold `dim` doubles; `out_chart` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gg_exp(
    p: *const GgProblem,
    x: *const f64,
    v: *const f64,
    dim: usize,
    rtol: f64,
    atol: f64,
    out_point: *mut f64,
    out_chart: *mut usize,
) -> GgStatus {
    guard(|| {
        let p = problem_arg(p)?;
        check_dim(p, dim)?;
        let end = p.exp_atlas(&vec_arg(x, dim, "x")?, &vec_arg(v, dim, "v")?, &opts(rtol, atol))?;
        write_out(out_point, &end.point())?;
        if !out_chart.is_null() {
            *out_chart = end.chart;
        }
        Ok(GgStatus::Ok)
    })
}

/// Initial velocity of the geodesic from `x` reaching `y` at time 1.
///
/// # Safety
/// `x`, `y` and `out_velocity` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn gg_connect(p: *const GgProblem, x: *const f64, y: *const f64, dim: usize, rtol: f64, atol: f64, out_velocity: *mut f64) -> GgStatus {
    guard(|| {
        let p = problem_arg(p)?;
        check_dim(p, dim)?;
        let (x, y) = (vec_arg(x, dim, "x")?, vec_arg(y, dim, "y")?);
        let r = connect(p.spray(), p.domain(), &p.space, &x, &y, None, &ShootingConfig::default(), &opts(rtol, atol))?;
        write_out(out_velocity, &r.velocity())?;
        Ok(GgStatus::Ok)
    })
}

/// Level distances (`levels` values) and the combined distance. Returns
/// `CHECK_FAILED` when some level value is only an upper bound.
///
/// # Safety
/// `x` and `y` must hold `dim` doubles, `out_levels` must hold `levels`
/// doubles (the problem's level count) and `out_rho` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gg_distance(
    p: *const GgProblem,
    x: *const f64,
    y: *const f64,
    dim: usize,
    out_levels: *mut f64,
    levels: usize,
    out_rho: *mut f64,
) -> GgStatus {
    guard(|| {
        let p = problem_arg(p)?;
        check_dim(p, dim)?;
        if levels != p.levels() {
            return Err(Failure(GgStatus::InvalidArgument, format!("expected {} levels, got {levels}", p.levels())));
        }
        if out_rho.is_null() {
            return Err(null("out_rho"));
        }
        let r = finsler_distance(
            p,
            &vec_arg(x, dim, "x")?,
            &vec_arg(y, dim, "y")?,
            &OdeOptions::default(),
            &DistanceOptions::default(),
        )?;
        write_out(out_levels, &Vector::from_iterator(levels, r.levels.iter().map(|l| l.value)))?;
        *out_rho = r.rho;
        Ok(if r.certified { GgStatus::Ok } else { GgStatus::CheckFailed })
    })
}

/// The Ricci-flow report as JSON for the identity base metric of size `m`.
/// `kind` is `flat`, `affine_invariant` or `ebin`.
///
/// # Safety
/// `kind` must be a NUL-terminated string, `weights` must hold `n_weights`
/// doubles and `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gg_ricci_report(
    kind: *const c_char,
    m: usize,
    weights: *const f64,
    n_weights: usize,
    lambda: f64,
    t_end: f64,
    out_json: *mut *mut c_char,
) -> GgStatus {
    guard(|| {
        let kind_str = str_arg(kind, "kind")?;
        let kind: SpdKind = serde_json::from_value(serde_json::Value::String(kind_str.into()))
            .map_err(|_| Failure(GgStatus::InvalidArgument, format!("unknown kind {kind_str:?}")))?;
        let w = vec_arg(weights, n_weights, "weights")?;
        let space = SpdMetricSpace::new(m, w.iter().copied().collect(), kind)?;
        let r = ricci_nongeodesic_report(&space, lambda, &Matrix::identity(m, m), t_end, &RicciConfig::default(), &OdeOptions::default())?;
        write_string(out_json, serde_json::to_string(&r).expect("serialize"))?;
        Ok(GgStatus::Ok)
    })
}

/// Runs a CLI command given as a JSON array of arguments (without the
/// program name), e.g. `["distance","--problem","flat","--y","1,0"]`.
/// Writes the JSON summary and returns the CLI exit code.
///
/// # Safety
/// `args_json` must be a NUL-terminated string and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn gg_run_command(args_json: *const c_char, out_json: *mut *mut c_char) -> i32 {
    let mut code = cli::EXIT_USAGE;
    let status = guard(|| {
        let v = json_arg(args_json, "args")?;
        let args: Vec<String> = serde_json::from_value(v).map_err(|e| Failure(GgStatus::InvalidArgument, format!("args: {e}")))?;
        let argv: Vec<String> = std::iter::once("gradedgeo".to_string()).chain(args).collect();
        let out = cli::run(&argv);
        code = out.code;
        if out.summary.is_null() {
            return Err(Failure(GgStatus::InvalidArgument, out.stderr.trim().to_string()));
        }
        write_string(out_json, serde_json::to_string(&out.summary).expect("serialize"))?;
        Ok(GgStatus::Ok)
    });
    match status {
        GgStatus::Ok => code,
        GgStatus::Panic => GgStatus::Panic as i32,
        _ => cli::EXIT_USAGE,
    }
}
