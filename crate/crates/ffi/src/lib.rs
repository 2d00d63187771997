//! C ABI for loading trained networks and pricing with them.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns a [`PirbfStatus`]; on failure
//! the message is available from [`pirbf_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pirbf::cli::checkpoint::Checkpoint;
use pirbf::oracle::{mc_price, McConfig};
use pirbf::problems::preset;
use pirbf::{BsProblem, Error, RbfNetwork};

/// Result codes. `Ok` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PirbfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Checkpoint = 5,
    NoClosedForm = 6,
    Numerical = 7,
    Panic = 8,
}

/// A trained network.
pub struct PirbfNetwork {
    net: RbfNetwork,
}

/// A pricing problem.
pub struct PirbfProblem {
    prob: BsProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PirbfStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::LengthMismatch { .. } | Error::UnsupportedDimension(_) => {
            PirbfStatus::DimensionMismatch
        }
        Error::Io(_) => PirbfStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => PirbfStatus::Checkpoint,
        Error::NonFinite(_) | Error::NotPositiveDefinite { .. } => PirbfStatus::Numerical,
        _ => PirbfStatus::InvalidArgument,
    }
}

struct Failure(PirbfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PirbfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PirbfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PirbfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PirbfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PirbfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pirbf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads the network stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pirbf_network_load(path: *const c_char, out: *mut *mut PirbfNetwork) -> PirbfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(PirbfNetwork { net: ck.network()? }));
        Ok(())
    })
}

/// # Safety
/// `net` must come from `pirbf_network_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pirbf_network_free(net: *mut PirbfNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width `d + 1` (asset prices then time); 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pirbf_network_input_dim(net: *const PirbfNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.input_dim())
}

/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pirbf_network_neurons(net: *const PirbfNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.n_neurons())
}

/// Evaluates `n_points` row-major points of width `dim` into `out`.
///
/// # Safety
/// `points` must hold `n_points * dim` values and `out` room for `n_points`.
#[no_mangle]
pub unsafe extern "C" fn pirbf_network_evaluate(
    net: *const PirbfNetwork,
    points: *const f64,
    n_points: usize,
    dim: usize,
    out: *mut f64,
) -> PirbfStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        if dim != net.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                got: dim,
            }
            .into());
        }
        let pts = slice_arg(points, n_points * dim, "points")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, n_points);
        for (o, p) in out.iter_mut().zip(pts.chunks_exact(dim)) {
            *o = net.evaluate(p)?;
        }
        Ok(())
    })
}

/// Looks up a named problem: `put1d`, `exchange2d` or `basket4d`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pirbf_problem_preset(name: *const c_char, out: *mut *mut PirbfProblem) -> PirbfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let prob = preset(str_arg(name, "name")?)?;
        *out = Box::into_raw(Box::new(PirbfProblem { prob }));
        Ok(())
    })
}

/// The problem a checkpoint was trained on.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pirbf_problem_from_checkpoint(
    path: *const c_char,
    out: *mut *mut PirbfProblem,
) -> PirbfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(PirbfProblem { prob: ck.problem }));
        Ok(())
    })
}

/// # Safety
/// `prob` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pirbf_problem_free(prob: *mut PirbfProblem) {
    if !prob.is_null() {
        drop(Box::from_raw(prob));
    }
}

/// Number of assets; 0 for a null handle.
///
/// # Safety
/// `prob` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pirbf_problem_assets(prob: *const PirbfProblem) -> usize {
    prob.as_ref().map_or(0, |p| p.prob.d)
}

/// Closed-form price at `(S_1, .., S_d, t)`.
///
/// # Safety
/// `point` must hold `dim` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pirbf_problem_exact_price(
    prob: *const PirbfProblem,
    point: *const f64,
    dim: usize,
    out: *mut f64,
) -> PirbfStatus {
    guard(|| {
        let prob = &prob.as_ref().ok_or_else(|| null("prob"))?.prob;
        if dim != prob.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: prob.input_dim(),
                got: dim,
            }
            .into());
        }
        let p = slice_arg(point, dim, "point")?;
        let out = out_arg(out, "out")?;
        *out = prob.exact_price(p).ok_or_else(|| {
            Failure(
                PirbfStatus::NoClosedForm,
                "no closed form for this problem or point outside the domain".into(),
            )
        })?;
        Ok(())
    })
}

/// Monte Carlo price at `t = 0` for spot prices `s0` of length `d`.
///
/// # Safety
/// `s0` must hold `d` values; `price` and `std_err` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pirbf_problem_mc_price(
    prob: *const PirbfProblem,
    s0: *const f64,
    d: usize,
    paths: u64,
    seed: u64,
    price: *mut f64,
    std_err: *mut f64,
) -> PirbfStatus {
    guard(|| {
        let prob = &prob.as_ref().ok_or_else(|| null("prob"))?.prob;
        let s0 = slice_arg(s0, d, "s0")?;
        let price = out_arg(price, "price")?;
        let std_err = out_arg(std_err, "std_err")?;
        let (p, e) = mc_price(prob, s0, &McConfig::new(paths, seed))?;
        *price = p;
        *std_err = e;
        Ok(())
    })
}
