//! C interface to `tdisc`.
//!
//! Every function returns a [`TdStatus`]; results go through out-pointers.
//! On failure `td_last_error_message` describes the error of the calling
//! thread. Handles are opaque and must be released with their `_free`
//! function exactly once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tdisc::config::{ProblemConfig, Resolved};
use tdisc::criterion::{self, GridOptions};
use tdisc::{Design, Error, SolveReport};

/// Status codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericDomain = 2,
    DegenerateDesign = 3,
    InvalidStart = 4,
    Syntax = 5,
    Config = 6,
    Io = 7,
    NullPointer = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A parsed problem together with its solver options and start design.
pub struct TdProblem {
    resolved: Resolved,
}

/// An approximate design: support points with weights summing to one.
pub struct TdDesign {
    design: Design,
}

/// The result of `td_solve`.
pub struct TdReport {
    report: SolveReport,
}

/// Scalar summary of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdSummary {
    pub t_value: f64,
    pub max_psi: f64,
    pub argmax: f64,
    pub efficiency: f64,
    pub iterations: usize,
    /// 1 when the efficiency tolerance was met.
    pub converged: i32,
}

/// Outcome of the equivalence-theorem check.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdCheck {
    pub t_value: f64,
    pub max_psi: f64,
    pub argmax: f64,
    pub gap_ratio: f64,
    pub efficiency: f64,
    pub support_deviation: f64,
    /// 1 when the design passes at the given tolerance.
    pub pass: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TdStatus {
    match e {
        Error::InvalidArgument(_) => TdStatus::InvalidArgument,
        Error::NumericDomain(_) => TdStatus::NumericDomain,
        Error::DegenerateDesign(_) => TdStatus::DegenerateDesign,
        Error::InvalidStart(_) => TdStatus::InvalidStart,
        Error::Syntax { .. } | Error::UnknownIdentifier { .. } => TdStatus::Syntax,
        Error::Config(_) => TdStatus::Config,
        Error::Io(_) => TdStatus::Io,
    }
}

struct Fail(TdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TdStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TdStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            TdStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

/// Message for the last failing call on this thread, or null after a
/// success. The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn td_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a TOML problem configuration (the same format as the CLI).
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_problem_from_config(config: *const c_char, out: *mut *mut TdProblem) -> TdStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = ptr::null_mut();
        if config.is_null() {
            return Err(null("config"));
        }
        let text = unsafe { CStr::from_ptr(config) }
            .to_str()
            .map_err(|e| Fail(TdStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let resolved = ProblemConfig::parse(text)?.resolve()?;
        *out = Box::into_raw(Box::new(TdProblem { resolved }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from `td_problem_from_config` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_problem_free(p: *mut TdProblem) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Number of pairwise comparisons after the prior expansion.
///
/// # Safety
/// `p` must be a live problem handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_problem_comparisons(p: *const TdProblem, out: *mut usize) -> TdStatus {
    guard(|| {
        let p = unsafe { deref(p, "problem") }?;
        *unsafe { self::out(out, "out") }? = p.resolved.problem.comparisons().len();
        Ok(())
    })
}

/// The configured starting design.
///
/// # Safety
/// `p` must be a live problem handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_problem_start(p: *const TdProblem, out: *mut *mut TdDesign) -> TdStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = ptr::null_mut();
        let p = unsafe { deref(p, "problem") }?;
        *out = Box::into_raw(Box::new(TdDesign { design: p.resolved.start.clone() }));
        Ok(())
    })
}

/// Builds a design from `n` distinct points in any order; the weights must sum to one.
///
/// # Safety
/// `points` and `weights` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_design_new(
    points: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut *mut TdDesign,
) -> TdStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = ptr::null_mut();
        let x = unsafe { slice(points, n, "points") }?;
        let w = unsafe { slice(weights, n, "weights") }?;
        let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(w.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let design = Design::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())?;
        *out = Box::into_raw(Box::new(TdDesign { design }));
        Ok(())
    })
}

/// # Safety
/// `d` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_design_free(d: *mut TdDesign) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}

/// Number of support points.
///
/// # Safety
/// `d` must be a live design handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_design_len(d: *const TdDesign, out: *mut usize) -> TdStatus {
    guard(|| {
        let d = unsafe { deref(d, "design") }?;
        *unsafe { self::out(out, "out") }? = d.design.len();
        Ok(())
    })
}

/// Copies the sorted support points and weights into buffers of length `cap`.
///
/// # Safety
/// `points` and `weights` must be writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn td_design_get(
    d: *const TdDesign,
    points: *mut f64,
    weights: *mut f64,
    cap: usize,
) -> TdStatus {
    guard(|| {
        let d = unsafe { deref(d, "design") }?;
        let n = d.design.len();
        if cap < n {
            return Err(Fail(TdStatus::BufferTooSmall, format!("need {n} entries, got {cap}")));
        }
        if points.is_null() || weights.is_null() {
            return Err(null("buffer"));
        }
        unsafe {
            ptr::copy_nonoverlapping(d.design.points().as_ptr(), points, n);
            ptr::copy_nonoverlapping(d.design.weights().as_ptr(), weights, n);
        }
        Ok(())
    })
}

/// The criterion value `T_P` of a design.
///
/// # Safety
/// `p` and `d` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_t_value(p: *const TdProblem, d: *const TdDesign, out: *mut f64) -> TdStatus {
    guard(|| {
        let p = unsafe { deref(p, "problem") }?;
        let d = unsafe { deref(d, "design") }?;
        let out = unsafe { self::out(out, "out") }?;
        let r = &p.resolved;
        *out = criterion::t_value_with(&r.problem, &d.design, None, &r.options.inner())?.value;
        Ok(())
    })
}

/// Runs the solver from `start`, or from the configured start when null.
///
/// # Safety
/// `p` must be live, `start` live or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn td_solve(p: *const TdProblem, start: *const TdDesign, out: *mut *mut TdReport) -> TdStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = ptr::null_mut();
        let p = unsafe { deref(p, "problem") }?;
        let r = &p.resolved;
        let start = match unsafe { start.as_ref() } {
            Some(d) => &d.design,
            None => &r.start,
        };
        let report = tdisc::solve(&r.problem, start, &r.options)?;
        *out = Box::into_raw(Box::new(TdReport { report }));
        Ok(())
    })
}

/// # Safety
/// `r` must come from `td_solve` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_report_free(r: *mut TdReport) {
    if !r.is_null() {
        drop(unsafe { Box::from_raw(r) });
    }
}

/// # Safety
/// `r` must be a live report; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_report_summary(r: *const TdReport, out: *mut TdSummary) -> TdStatus {
    guard(|| {
        let r = &unsafe { deref(r, "report") }?.report;
        *unsafe { self::out(out, "out") }? = TdSummary {
            t_value: r.t_value,
            max_psi: r.max_psi,
            argmax: r.argmax,
            efficiency: r.efficiency,
            iterations: r.iterations,
            converged: r.converged() as i32,
        };
        Ok(())
    })
}

/// A copy of the optimised design.
///
/// # Safety
/// `r` must be a live report; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_report_design(r: *const TdReport, out: *mut *mut TdDesign) -> TdStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = ptr::null_mut();
        let r = unsafe { deref(r, "report") }?;
        *out = Box::into_raw(Box::new(TdDesign { design: r.report.design.clone() }));
        Ok(())
    })
}

/// Equivalence-theorem check; `tol <= 0` uses the configured tolerance.
///
/// # Safety
/// `p` and `d` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn td_check(p: *const TdProblem, d: *const TdDesign, tol: f64, out: *mut TdCheck) -> TdStatus {
    guard(|| {
        let p = unsafe { deref(p, "problem") }?;
        let d = unsafe { deref(d, "design") }?;
        let out = unsafe { self::out(out, "out") }?;
        let r = &p.resolved;
        let space = r.problem.space();
        let grid = GridOptions {
            grid_points: r.options.grid_points,
            refine_tol: r.options.refine_tol.unwrap_or(1e-8 * space.width()),
        };
        let tol = if tol > 0.0 { tol } else { r.tol };
        let c = criterion::check_optimality_with(&r.problem, &d.design, tol, grid, &r.options.inner())?;
        *out = TdCheck {
            t_value: c.t_value,
            max_psi: c.max_psi,
            argmax: c.argmax,
            gap_ratio: c.gap_ratio,
            efficiency: c.efficiency,
            support_deviation: c.support_deviation,
            pass: c.pass as i32,
        };
        Ok(())
    })
}

/// Ψ on `n` equally spaced points of the design space, written to `xs` and `psi`.
///
/// # Safety
/// `xs` and `psi` must be writable for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn td_psi_curve(
    p: *const TdProblem,
    d: *const TdDesign,
    n: usize,
    xs: *mut f64,
    psi: *mut f64,
) -> TdStatus {
    guard(|| {
        let p = unsafe { deref(p, "problem") }?;
        let d = unsafe { deref(d, "design") }?;
        if xs.is_null() || psi.is_null() {
            return Err(null("buffer"));
        }
        let r = &p.resolved;
        let eval = criterion::t_value_with(&r.problem, &d.design, None, &r.options.inner())?;
        let curve = criterion::psi_curve(&r.problem, &eval, n)?;
        for (k, (x, v)) in curve.into_iter().enumerate() {
            unsafe {
                *xs.add(k) = x;
                *psi.add(k) = v;
            }
        }
        Ok(())
    })
}
