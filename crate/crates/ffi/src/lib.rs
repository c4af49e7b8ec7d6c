//! C ABI over `eposs`.
//!
//! Objects are opaque handles created by `*_new` functions and released with
//! the matching `*_free`. Every fallible call returns an [`EpossStatus`]; on
//! failure, [`eposs_last_error`] copies a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::ptr;
use std::slice;

use eposs::calibration::{beta_mixture_calibrator, Calibrator};
use eposs::eprocess::{confidence_region, regularize, savage_dickey_gaussian, DataView, RegularizedEProcess};
use eposs::im::{im_contour, upper_expected_loss, LossFunction};
use eposs::possibility::{make_prior, Contour, Grid, PriorKind};
use eposs::regularization::{regularizer_from_contour, vacuous};
use eposs::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpossStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NotAdmissible = 4,
    BufferTooSmall = 5,
    EmptyResult = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> EpossStatus {
    match err {
        Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::OutOfDomain(_) => EpossStatus::DataError,
        Error::NotAdmissible(_) | Error::RegularizerBound { .. } | Error::NotNormalized { .. } => EpossStatus::NotAdmissible,
        _ => EpossStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> EpossStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> EpossStatus {
    set_error(format!("{what} is null"));
    EpossStatus::NullPointer
}

fn guarded(f: impl FnOnce() -> EpossStatus) -> EpossStatus {
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == EpossStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => {
            set_error("internal panic");
            EpossStatus::Panic
        }
    }
}

/// An admissible calibrator γ.
pub struct EpossCalibrator {
    inner: Calibrator,
}

/// A normalized prior possibility contour on a grid.
pub struct EpossPrior {
    inner: Contour,
}

/// A regularized Gaussian e-process.
pub struct EpossEProcess {
    inner: RegularizedEProcess,
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn eposs_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            // SAFETY: caller guarantees `cap` writable bytes at `buf`.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Creates the beta-mixture calibrator with shape `kappa`.
///
/// # Safety
/// `out` must be a valid pointer to write a handle into.
#[no_mangle]
pub unsafe extern "C" fn eposs_calibrator_new(kappa: f64, out: *mut *mut EpossCalibrator) -> EpossStatus {
    if out.is_null() {
        return null("out");
    }
    guarded(move || match beta_mixture_calibrator(kappa) {
        Ok(c) => {
            // SAFETY: checked non-null above.
            unsafe { *out = Box::into_raw(Box::new(EpossCalibrator { inner: c })) };
            EpossStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// γ(u).
///
/// # Safety
/// `cal` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eposs_calibrator_gamma(cal: *const EpossCalibrator, u: f64, out: *mut f64) -> EpossStatus {
    // SAFETY: caller guarantees `cal` is null or a live handle.
    let Some(cal) = (unsafe { cal.as_ref() }) else { return null("calibrator") };
    if out.is_null() {
        return null("out");
    }
    if !(0.0..=1.0).contains(&u) {
        set_error(format!("u must lie in [0,1], got {u}"));
        return EpossStatus::InvalidArgument;
    }
    // SAFETY: checked non-null above.
    unsafe { *out = cal.inner.gamma(u) };
    set_error("");
    EpossStatus::Ok
}

/// Releases a calibrator. Null is ignored.
///
/// # Safety
/// `cal` must come from [`eposs_calibrator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eposs_calibrator_free(cal: *mut EpossCalibrator) {
    if !cal.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(cal) });
    }
}

fn line(lower: f64, upper: f64, nodes: usize) -> Result<Grid, EpossStatus> {
    Grid::line(lower, upper, nodes).map_err(fail)
}

/// Builds a named one-dimensional prior contour on `nodes` points of `[lower, upper]`.
/// `kind` is one of gaussian_surprise, mean_bound, event_bound, median_prior or vacuous.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eposs_prior_new(
    kind: *const c_char,
    k: f64,
    lower: f64,
    upper: f64,
    nodes: usize,
    out: *mut *mut EpossPrior,
) -> EpossStatus {
    if kind.is_null() {
        return null("kind");
    }
    if out.is_null() {
        return null("out");
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    let name = match unsafe { CStr::from_ptr(kind) }.to_str() {
        Ok(s) => s.to_owned(),
        Err(_) => {
            set_error("kind is not UTF-8");
            return EpossStatus::InvalidArgument;
        }
    };
    guarded(move || {
        let grid = match line(lower, upper, nodes) {
            Ok(g) => g,
            Err(s) => return s,
        };
        match PriorKind::parse(&name, Some(k)).and_then(|kind| make_prior(kind, &grid)) {
            Ok(c) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(EpossPrior { inner: c })) };
                EpossStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// q(θ).
///
/// # Safety
/// `prior` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eposs_prior_eval(prior: *const EpossPrior, theta: f64, out: *mut f64) -> EpossStatus {
    // SAFETY: caller guarantees `prior` is null or a live handle.
    let Some(p) = (unsafe { prior.as_ref() }) else { return null("prior") };
    if out.is_null() {
        return null("out");
    }
    // SAFETY: checked non-null above.
    unsafe { *out = p.inner.eval(&[theta]) };
    set_error("");
    EpossStatus::Ok
}

/// Releases a prior. Null is ignored.
///
/// # Safety
/// `prior` must come from [`eposs_prior_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eposs_prior_free(prior: *mut EpossPrior) {
    if !prior.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(prior) });
    }
}

/// Savage–Dickey Gaussian e-process with mixing variance `v`, regularized by
/// `prior` through `cal`. A null `prior` gives the unregularized process; a null
/// `cal` with a non-null prior uses the beta mixture with κ = 1.
///
/// # Safety
/// `prior` and `cal` must be null or live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eposs_eprocess_new(
    v: f64,
    prior: *const EpossPrior,
    cal: *const EpossCalibrator,
    out: *mut *mut EpossEProcess,
) -> EpossStatus {
    if out.is_null() {
        return null("out");
    }
    // SAFETY: caller guarantees null or live handles.
    let (prior, cal) = unsafe { (prior.as_ref(), cal.as_ref()) };
    let prior = prior.map(|p| p.inner.clone());
    let cal = cal.map(|c| c.inner.clone());
    guarded(move || {
        let build = || -> eposs::Result<RegularizedEProcess> {
            let base = savage_dickey_gaussian(v)?;
            let rho = match prior {
                None => vacuous(),
                Some(q) => {
                    let g = match cal {
                        Some(c) => c,
                        None => beta_mixture_calibrator(1.0)?,
                    };
                    regularizer_from_contour(&q, &g)?
                }
            };
            regularize(base, rho)
        };
        match build() {
            Ok(e) => {
                // SAFETY: checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(EpossEProcess { inner: e })) };
                EpossStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `data` must be null with `len == 0`, or point to `len` readable doubles.
unsafe fn data_slice<'a>(data: *const f64, len: usize) -> Result<&'a [f64], EpossStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null("data"));
    }
    // SAFETY: caller guarantees `len` readable doubles.
    let s = unsafe { slice::from_raw_parts(data, len) };
    if s.iter().any(|x| !x.is_finite()) {
        set_error("data contain non-finite values");
        return Err(EpossStatus::DataError);
    }
    Ok(s)
}

/// ln 𝔢^reg(z^n, θ) for the `len` observations at `data`.
///
/// # Safety
/// `ep` must be a live handle, `data` valid for `len` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eposs_eprocess_log_value(
    ep: *const EpossEProcess,
    data: *const f64,
    len: usize,
    theta: f64,
    out: *mut f64,
) -> EpossStatus {
    // SAFETY: caller guarantees `ep` is null or a live handle.
    let Some(ep) = (unsafe { ep.as_ref() }) else { return null("eprocess") };
    if out.is_null() {
        return null("out");
    }
    // SAFETY: forwarded caller guarantee.
    let z = match unsafe { data_slice(data, len) } {
        Ok(z) => z,
        Err(s) => return s,
    };
    match ep.inner.log_value(DataView::Real(z), &[theta]) {
        Ok(v) => {
            // SAFETY: checked non-null above.
            unsafe { *out = v };
            set_error("");
            EpossStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Writes the IM contour π on `nodes` points of `[lower, upper]` into `out`
/// (capacity `cap`, at least `nodes`).
///
/// # Safety
/// `ep` must be a live handle, `data` valid for `len` doubles, `out` valid for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn eposs_contour_values(
    ep: *const EpossEProcess,
    data: *const f64,
    len: usize,
    lower: f64,
    upper: f64,
    nodes: usize,
    out: *mut f64,
    cap: usize,
) -> EpossStatus {
    // SAFETY: caller guarantees `ep` is null or a live handle.
    let Some(ep) = (unsafe { ep.as_ref() }) else { return null("eprocess") };
    if out.is_null() {
        return null("out");
    }
    // SAFETY: forwarded caller guarantee.
    let z = match unsafe { data_slice(data, len) } {
        Ok(z) => z,
        Err(s) => return s,
    };
    if cap < nodes {
        set_error(format!("buffer holds {cap} values, {nodes} needed"));
        return EpossStatus::BufferTooSmall;
    }
    let grid = match line(lower, upper, nodes) {
        Ok(g) => g,
        Err(s) => return s,
    };
    match im_contour(&ep.inner, DataView::Real(z), &grid) {
        Ok(im) => {
            // SAFETY: `cap ≥ nodes` writable doubles.
            unsafe { ptr::copy_nonoverlapping(im.values().as_ptr(), out, nodes) };
            set_error("");
            EpossStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Interval hull of the level-α confidence region on a grid.
/// Returns `EmptyResult` when no grid node is retained.
///
/// # Safety
/// `ep` must be a live handle, `data` valid for `len` doubles, `lo`/`hi` writable.
#[no_mangle]
pub unsafe extern "C" fn eposs_confidence_hull(
    ep: *const EpossEProcess,
    data: *const f64,
    len: usize,
    alpha: f64,
    lower: f64,
    upper: f64,
    nodes: usize,
    lo: *mut f64,
    hi: *mut f64,
) -> EpossStatus {
    // SAFETY: caller guarantees `ep` is null or a live handle.
    let Some(ep) = (unsafe { ep.as_ref() }) else { return null("eprocess") };
    if lo.is_null() || hi.is_null() {
        return null("lo/hi");
    }
    // SAFETY: forwarded caller guarantee.
    let z = match unsafe { data_slice(data, len) } {
        Ok(z) => z,
        Err(s) => return s,
    };
    let grid = match line(lower, upper, nodes) {
        Ok(g) => g,
        Err(s) => return s,
    };
    match confidence_region(&ep.inner, DataView::Real(z), alpha, &grid) {
        Ok(r) => match r.hull {
            Some((a, b)) => {
                // SAFETY: checked non-null above.
                unsafe {
                    *lo = a;
                    *hi = b;
                }
                set_error("");
                EpossStatus::Ok
            }
            None => {
                set_error("confidence region is empty on the grid");
                EpossStatus::EmptyResult
            }
        },
        Err(e) => fail(e),
    }
}

/// Upper expected squared-error loss of action `a` under the IM contour on a grid.
///
/// # Safety
/// `ep` must be a live handle, `data` valid for `len` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eposs_upper_squared_loss(
    ep: *const EpossEProcess,
    data: *const f64,
    len: usize,
    a: f64,
    lower: f64,
    upper: f64,
    nodes: usize,
    out: *mut f64,
) -> EpossStatus {
    // SAFETY: caller guarantees `ep` is null or a live handle.
    let Some(ep) = (unsafe { ep.as_ref() }) else { return null("eprocess") };
    if out.is_null() {
        return null("out");
    }
    // SAFETY: forwarded caller guarantee.
    let z = match unsafe { data_slice(data, len) } {
        Ok(z) => z,
        Err(s) => return s,
    };
    let grid = match line(lower, upper, nodes) {
        Ok(g) => g,
        Err(s) => return s,
    };
    let run = || -> eposs::Result<f64> {
        let im = im_contour(&ep.inner, DataView::Real(z), &grid)?;
        upper_expected_loss(&im, &LossFunction::squared_error(vec![a])?, a)
    };
    match run() {
        Ok(v) => {
            // SAFETY: checked non-null above.
            unsafe { *out = v };
            set_error("");
            EpossStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Releases an e-process. Null is ignored.
///
/// # Safety
/// `ep` must come from [`eposs_eprocess_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eposs_eprocess_free(ep: *mut EpossEProcess) {
    if !ep.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(ep) });
    }
}
