//! C ABI over `lqbridge`: systems and kernels behind opaque handles.
//!
//! Every fallible function returns an [`LqbStatus`] and writes its result
//! through an out-pointer. On failure a message is kept per thread and can be
//! read with [`lqb_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lqbridge::kernel::KernelConfig;
use lqbridge::linalg::Vector;
use lqbridge::ltv_system::check_assumptions;
use lqbridge::{Error, KernelEvaluator, LtvSystem, StepPolicy};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    /// Integration failure, loss of controllability, truncation and the like.
    Numerical = 4,
    Config = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque system handle.
pub struct LqbSystem {
    inner: LtvSystem,
}

/// Opaque kernel handle for one pair of times.
pub struct LqbKernel {
    inner: KernelEvaluator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

struct Failure {
    status: LqbStatus,
    message: String,
}

impl Failure {
    fn new(status: LqbStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => LqbStatus::Dimension,
            Error::Parameter(_) => LqbStatus::InvalidArgument,
            Error::Config(_) | Error::Json(_) => LqbStatus::Config,
            Error::Io(_) | Error::Csv(_) => LqbStatus::Io,
            Error::IntegrationFailure { .. }
            | Error::FiniteEscape { .. }
            | Error::NearConjugatePoint { .. }
            | Error::ControllabilityLoss { .. }
            | Error::DegenerateHorizon { .. }
            | Error::LimitNonconvergence { .. }
            | Error::NotPositiveDefinite(_)
            | Error::Truncation { .. }
            | Error::Underflow(_)
            | Error::SimulationBlowup { .. }
            | Error::Infeasible(_) => LqbStatus::Numerical,
        };
        Failure::new(status, e.to_string())
    }
}

/// Runs `f`, records any failure or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LqbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LqbStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.status
        }
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown payload".into());
            set_last_error(format!("panic: {detail}"));
            LqbStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure::new(LqbStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn vector(p: *const f64, len: usize, name: &str) -> Result<Vector, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(Vector::from_column_slice(std::slice::from_raw_parts(p, len)))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn boxed_system(out: *mut *mut LqbSystem, sys: LtvSystem) -> Result<(), Failure> {
    unsafe { write_out(out, Box::into_raw(Box::new(LqbSystem { inner: sys })), "out") }
}

/// Message of the most recent failure on the calling thread, or null if none.
/// The pointer stays valid until the next failing call on this thread or
/// [`lqb_clear_error`].
#[no_mangle]
pub extern "C" fn lqb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn lqb_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lqb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a system from its JSON definition.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a writable pointer.
/// On success `*out` owns a handle to release with [`lqb_system_free`].
#[no_mangle]
pub unsafe extern "C" fn lqb_system_from_json(json: *const c_char, out: *mut *mut LqbSystem) -> LqbStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure::new(LqbStatus::InvalidArgument, format!("json is not UTF-8: {e}")))?;
        boxed_system(out, LtvSystem::from_json(text)?)
    })
}

/// `(A, B, Q) = (0, I, 0)` in `n` dimensions on `[t0, t1]`.
///
/// # Safety
/// `out` must be a writable pointer; release the handle with [`lqb_system_free`].
#[no_mangle]
pub unsafe extern "C" fn lqb_system_heat(n: usize, t0: f64, t1: f64, out: *mut *mut LqbSystem) -> LqbStatus {
    guard(|| boxed_system(out, LtvSystem::heat(n, (t0, t1))?))
}

/// `(A, B, Q) = (0, I, 2 diag(d))` on `[t0, t1]`.
///
/// # Safety
/// `d` must point to `n` readable doubles and `out` must be writable; release
/// the handle with [`lqb_system_free`].
#[no_mangle]
pub unsafe extern "C" fn lqb_system_diagonal(
    d: *const f64,
    n: usize,
    t0: f64,
    t1: f64,
    out: *mut *mut LqbSystem,
) -> LqbStatus {
    guard(|| {
        let d = vector(d, n, "d")?;
        boxed_system(out, LtvSystem::diagonal_case(d.as_slice(), (t0, t1))?)
    })
}

/// State and input dimensions.
///
/// # Safety
/// `system` must be a live handle; `n` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqb_system_dimensions(system: *const LqbSystem, n: *mut usize, m: *mut usize) -> LqbStatus {
    guard(|| {
        let sys = &deref(system, "system")?.inner;
        write_out(n, sys.n(), "n")?;
        write_out(m, sys.m(), "m")
    })
}

/// Controllability and killing-sign report as a JSON string.
///
/// # Safety
/// `system` must be a live handle and `out` writable. On success `*out` is a
/// NUL-terminated string to release with [`lqb_string_free`].
#[no_mangle]
pub unsafe extern "C" fn lqb_system_check_json(system: *const LqbSystem, tol: f64, out: *mut *mut c_char) -> LqbStatus {
    guard(|| {
        let sys = &deref(system, "system")?.inner;
        let report = check_assumptions(sys, tol, StepPolicy::default())?;
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        let s = CString::new(json).map_err(|e| Failure::new(LqbStatus::Panic, e.to_string()))?;
        write_out(out, s.into_raw(), "out")
    })
}

/// # Safety
/// `system` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lqb_system_free(system: *mut LqbSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Assembles the kernel from `t0` to `t` (`t0 < t`, both inside the horizon).
///
/// # Safety
/// `system` must be a live handle and `out` writable; release the kernel with
/// [`lqb_kernel_free`]. The kernel does not borrow the system.
#[no_mangle]
pub unsafe extern "C" fn lqb_kernel_new(system: *const LqbSystem, t0: f64, t: f64, out: *mut *mut LqbKernel) -> LqbStatus {
    guard(|| {
        let sys = &deref(system, "system")?.inner;
        let k = KernelEvaluator::new(sys, t0, t, &KernelConfig::default())?;
        write_out(out, Box::into_raw(Box::new(LqbKernel { inner: k })), "out")
    })
}

unsafe fn points<'a>(kernel: *const LqbKernel, x: *const f64, y: *const f64, n: usize) -> Result<(&'a KernelEvaluator, Vector, Vector), Failure> {
    let k = &deref(kernel, "kernel")?.inner;
    if n != k.n() {
        return Err(Failure::new(LqbStatus::Dimension, format!("n = {n}, kernel has dimension {}", k.n())));
    }
    Ok((k, vector(x, n, "x")?, vector(y, n, "y")?))
}

/// `κ(t0, x, t, y)`.
///
/// # Safety
/// `kernel` must be a live handle, `x` and `y` must point to `n` readable
/// doubles each, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lqb_kernel_eval(kernel: *const LqbKernel, x: *const f64, y: *const f64, n: usize, out: *mut f64) -> LqbStatus {
    guard(|| {
        let (k, x, y) = points(kernel, x, y, n)?;
        write_out(out, k.eval(&x, &y), "out")
    })
}

/// `ln κ(t0, x, t, y)`, finite where `κ` itself underflows.
///
/// # Safety
/// As for [`lqb_kernel_eval`].
#[no_mangle]
pub unsafe extern "C" fn lqb_kernel_log_eval(kernel: *const LqbKernel, x: *const f64, y: *const f64, n: usize, out: *mut f64) -> LqbStatus {
    guard(|| {
        let (k, x, y) = points(kernel, x, y, n)?;
        write_out(out, k.log_eval(&x, &y), "out")
    })
}

/// Optimal control cost from `x` at `t0` to `y` at `t`, i.e. `½ dist²(x, y)`.
///
/// # Safety
/// As for [`lqb_kernel_eval`].
#[no_mangle]
pub unsafe extern "C" fn lqb_kernel_half_squared_distance(
    kernel: *const LqbKernel,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> LqbStatus {
    guard(|| {
        let (k, x, y) = points(kernel, x, y, n)?;
        write_out(out, k.form().half_squared_distance(&x, &y), "out")
    })
}

/// The factor `c(t, t0)` in front of the Gaussian.
///
/// # Safety
/// `kernel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lqb_kernel_normalizer(kernel: *const LqbKernel, out: *mut f64) -> LqbStatus {
    guard(|| write_out(out, deref(kernel, "kernel")?.inner.normalizer(), "out"))
}

/// Writes the `2n × 2n` distance matrix `[M11 M12; M12ᵀ M22]` row-major.
///
/// # Safety
/// `kernel` must be a live handle and `out` must point to `len` writable
/// doubles; `len` must equal `4n²`.
#[no_mangle]
pub unsafe extern "C" fn lqb_kernel_distance_matrix(kernel: *const LqbKernel, out: *mut f64, len: usize) -> LqbStatus {
    guard(|| {
        let full = deref(kernel, "kernel")?.inner.form().full();
        let size = full.nrows();
        if len != size * size {
            return Err(Failure::new(LqbStatus::Dimension, format!("buffer holds {len} values, need {}", size * size)));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let buf = std::slice::from_raw_parts_mut(out, len);
        for i in 0..size {
            for j in 0..size {
                buf[i * size + j] = full[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `kernel` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lqb_kernel_free(kernel: *mut LqbKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lqb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, LqbStatus::Panic);
        let msg = unsafe { CStr::from_ptr(lqb_last_error_message()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn errors_map_to_statuses() {
        let f = Failure::from(Error::Dimension("x".into()));
        assert_eq!(f.status, LqbStatus::Dimension);
        let f = Failure::from(Error::Truncation { ratio: 1.0, limit: 1e-6 });
        assert_eq!(f.status, LqbStatus::Numerical);
    }

    #[test]
    fn last_error_is_per_thread() {
        set_last_error("here".into());
        let other = std::thread::spawn(|| lqb_last_error_message().is_null()).join().unwrap();
        assert!(other);
        lqb_clear_error();
        assert!(lqb_last_error_message().is_null());
    }
}
