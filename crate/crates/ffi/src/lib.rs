//! C ABI over `rfens-core`.
//!
//! Every function returns an [`RfensStatus`]. On failure the message is
//! available from [`rfens_last_error_message`] on the same thread. Spectra
//! are opaque handles released with [`rfens_spectrum_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use nalgebra::DMatrix;
use rfens_core::risk_theory::{
    optimal_ridge, risk_ensemble, solve_kappa2, ExperimentConfig, RidgeSearch, RiskDecomposition,
};
use rfens_core::scaling_laws::{fit_power_law, theoretical_exponent, FitWindow};
use rfens_core::simulator::classification_losses;
use rfens_core::spectra::{load_spectrum, power_law_spectrum, PowerLawParams, TaskEigenstructure};
use rfens_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfensStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Domain = 3,
    Shape = 4,
    Solver = 5,
    Infeasible = 6,
    Instability = 7,
    Regime = 8,
    Degenerate = 9,
    Singular = 10,
    Fit = 11,
    Io = 12,
    Format = 13,
    Panic = 14,
    Other = 15,
}

impl From<&Error> for RfensStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Config(_) => RfensStatus::InvalidParameter,
            Error::Domain(_) | Error::DivergentTrace { .. } | Error::EmptySpectrum => RfensStatus::Domain,
            Error::Shape(_) => RfensStatus::Shape,
            Error::Solver { .. } => RfensStatus::Solver,
            Error::Infeasible { .. } => RfensStatus::Infeasible,
            Error::Instability { .. } => RfensStatus::Instability,
            Error::Regime(_) => RfensStatus::Regime,
            Error::Degenerate(_) => RfensStatus::Degenerate,
            Error::Singular(_) => RfensStatus::Singular,
            Error::Fit(_) => RfensStatus::Fit,
            Error::Io(_) => RfensStatus::Io,
            Error::Format { .. } | Error::Json(_) => RfensStatus::Format,
        }
    }
}

/// Opaque task eigenstructure.
pub struct RfensSpectrum {
    inner: TaskEigenstructure,
}

/// Risk estimate and its components.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RfensRisk {
    pub kappa2: f64,
    pub rho: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub bias_sq: f64,
    pub var_single: f64,
    pub risk: f64,
    /// Non-zero when the estimate is close to the interpolation peak.
    pub near_interpolation: u8,
}

impl From<RiskDecomposition> for RfensRisk {
    fn from(d: RiskDecomposition) -> Self {
        RfensRisk {
            kappa2: d.kappa2,
            rho: d.rho,
            gamma1: d.gamma1,
            gamma2: d.gamma2,
            bias_sq: d.bias_sq,
            var_single: d.var_single,
            risk: d.risk,
            near_interpolation: d.near_interpolation.into(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

struct Failure(RfensStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(RfensStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RfensStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RfensStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            RfensStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            RfensStatus::Panic
        }
    }
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `len` readable elements.
    Ok(unsafe { slice::from_raw_parts(ptr, len) })
}

unsafe fn spectrum<'a>(spec: *const RfensSpectrum) -> Result<&'a TaskEigenstructure, Failure> {
    // SAFETY: caller passes a handle from an `rfens_spectrum_*` constructor.
    unsafe { spec.as_ref() }
        .map(|s| &s.inner)
        .ok_or_else(|| null("spectrum"))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and, by contract, valid for writes.
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn emit_spectrum(out: *mut *mut RfensSpectrum, inner: TaskEigenstructure) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let handle = Box::into_raw(Box::new(RfensSpectrum { inner }));
    // SAFETY: checked non-null above.
    unsafe { out.write(handle) };
    Ok(())
}

/// Failure message of the previous call on this thread, empty after success. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn rfens_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a spectrum from `len` eigenvalues (non-increasing) and target
/// weights.
///
/// # Safety
/// `eta` and `wbar` must point to `len` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_spectrum_new(
    eta: *const f64,
    wbar: *const f64,
    len: usize,
    noise_var: f64,
    out: *mut *mut RfensSpectrum,
) -> RfensStatus {
    guard(|| unsafe {
        let eta = input(eta, len, "eta")?.to_vec();
        let wbar = input(wbar, len, "wbar")?.to_vec();
        emit_spectrum(out, TaskEigenstructure::new(eta, wbar, noise_var)?)
    })
}

/// Power-law spectrum with `len` modes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_spectrum_power_law(
    alpha: f64,
    r: f64,
    len: usize,
    noise_var: f64,
    out: *mut *mut RfensSpectrum,
) -> RfensStatus {
    guard(|| unsafe { emit_spectrum(out, power_law_spectrum(&PowerLawParams::new(alpha, r, len, noise_var))?) })
}

/// Loads a spectrum CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_spectrum_load(
    path: *const c_char,
    noise_var: f64,
    out: *mut *mut RfensSpectrum,
) -> RfensStatus {
    guard(|| unsafe {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(RfensStatus::InvalidParameter, "path is not UTF-8".into()))?;
        emit_spectrum(out, load_spectrum(Path::new(path), noise_var)?)
    })
}

/// Number of modes, or 0 for a null handle.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rfens_spectrum_len(spec: *const RfensSpectrum) -> usize {
    unsafe { spec.as_ref() }.map_or(0, |s| s.inner.len())
}

/// Releases a spectrum. Null is ignored.
///
/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfens_spectrum_free(spec: *mut RfensSpectrum) {
    if !spec.is_null() {
        // SAFETY: created by Box::into_raw in a constructor.
        drop(unsafe { Box::from_raw(spec) });
    }
}

/// Renormalized ridge `kappa_2` at `(P, N, lambda)`.
///
/// # Safety
/// `spec` must be a live handle; `out_kappa` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_solve_kappa2(
    spec: *const RfensSpectrum,
    p: f64,
    n: f64,
    lambda: f64,
    out_kappa: *mut f64,
) -> RfensStatus {
    guard(|| unsafe {
        let kappa = solve_kappa2(spectrum(spec)?, p, n, lambda)?;
        write(out_kappa, kappa, "out_kappa")
    })
}

/// Ensemble risk estimate at `(P, N, K, lambda)`.
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_risk_ensemble(
    spec: *const RfensSpectrum,
    p: u64,
    n: u64,
    k: u64,
    lambda: f64,
    out: *mut RfensRisk,
) -> RfensStatus {
    guard(|| unsafe {
        let d = risk_ensemble(spectrum(spec)?, &ExperimentConfig::new(p, n, k, lambda))?;
        write(out, d.into(), "out")
    })
}

/// Risk-minimizing ridge with the default search.
///
/// # Safety
/// `spec` must be a live handle; `out_lambda` and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_optimal_ridge(
    spec: *const RfensSpectrum,
    p: u64,
    n: u64,
    k: u64,
    out_lambda: *mut f64,
    out: *mut RfensRisk,
) -> RfensStatus {
    guard(|| unsafe {
        if out_lambda.is_null() || out.is_null() {
            return Err(null("output"));
        }
        let opt = optimal_ridge(spectrum(spec)?, p, n, k, &RidgeSearch::default())?;
        write(out_lambda, opt.lambda, "out_lambda")?;
        write(out, opt.decomposition.into(), "out")
    })
}

/// Bias, variance and overall scaling exponents at growth exponent `ell`.
///
/// # Safety
/// The three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_theoretical_exponent(
    alpha: f64,
    r: f64,
    ell: f64,
    out_s_bias: *mut f64,
    out_s_var: *mut f64,
    out_s: *mut f64,
) -> RfensStatus {
    guard(|| unsafe {
        if out_s_bias.is_null() || out_s_var.is_null() || out_s.is_null() {
            return Err(null("output"));
        }
        let e = theoretical_exponent(alpha, r, ell)?;
        write(out_s_bias, e.s_bias, "out_s_bias")?;
        write(out_s_var, e.s_var, "out_s_var")?;
        write(out_s, e.s, "out_s")
    })
}

/// Least-squares fit of `y ~ C x^(-slope)` over all points.
///
/// # Safety
/// `xs` and `ys` must point to `len` readable doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_fit_power_law(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out_slope: *mut f64,
    out_intercept: *mut f64,
) -> RfensStatus {
    guard(|| unsafe {
        if out_slope.is_null() || out_intercept.is_null() {
            return Err(null("output"));
        }
        let fit = fit_power_law(input(xs, len, "xs")?, input(ys, len, "ys")?, FitWindow::Full)?;
        write(out_slope, fit.slope, "out_slope")?;
        write(out_intercept, fit.intercept, "out_intercept")
    })
}

/// Score-average and majority-vote error rates. `scores` is `k x q`
/// row-major (one row per member); `labels` holds `q` values of +1 or -1.
///
/// # Safety
/// `scores` must point to `k * q` doubles, `labels` to `q`; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rfens_classification_losses(
    scores: *const f64,
    k: usize,
    q: usize,
    labels: *const f64,
    out_sa: *mut f64,
    out_mv: *mut f64,
) -> RfensStatus {
    guard(|| unsafe {
        if out_sa.is_null() || out_mv.is_null() {
            return Err(null("output"));
        }
        let total = k
            .checked_mul(q)
            .ok_or_else(|| Failure(RfensStatus::Shape, "k * q overflows".into()))?;
        let scores = DMatrix::from_row_slice(k, q, input(scores, total, "scores")?);
        let (sa, mv) = classification_losses(&scores, input(labels, q, "labels")?)?;
        write(out_sa, sa, "out_sa")?;
        write(out_mv, mv, "out_mv")
    })
}
