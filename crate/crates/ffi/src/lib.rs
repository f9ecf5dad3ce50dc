//! C ABI over the `fbcap` library.
//!
//! Models are passed around as opaque `FbcapModel` handles. Every fallible
//! function returns an `FbcapStatus`; on failure the message is available
//! from `fbcap_last_error` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fbcap::capacity::{self, CapacityOptions};
use fbcap::model::{self, Ar1Params};
use fbcap::{detect, ChannelModel, Error, Mat};

/// Opaque channel model handle.
pub struct FbcapModel {
    inner: ChannelModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbcapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    NotDetectable = 4,
    Numerical = 5,
    Panic = 6,
}

/// Summary of a stationary capacity solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FbcapCapacity {
    pub rate_nats: f64,
    pub rate_bits: f64,
    pub kkt_residual: f64,
    pub min_lmi_eig: f64,
    pub closed_loop_detectable: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> FbcapStatus {
    match err {
        Error::Json(_) | Error::Io(_) => FbcapStatus::ParseError,
        Error::NotDetectable { .. } => FbcapStatus::NotDetectable,
        Error::DimensionMismatch(_)
        | Error::JointNoiseNotPsd { .. }
        | Error::Sigma1NotPsd { .. }
        | Error::InvalidDelay(_)
        | Error::InvalidParameter(_)
        | Error::UnitCircleNoise
        | Error::OutOfRange(_) => FbcapStatus::InvalidArgument,
        _ => FbcapStatus::Numerical,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard<F>(f: F) -> FbcapStatus
where
    F: FnOnce() -> Result<(), FbcapError>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FbcapStatus::Ok,
        Ok(Err(FbcapError::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FbcapStatus::NullPointer
        }
        Ok(Err(FbcapError::Arg(msg))) => {
            set_error(msg);
            FbcapStatus::InvalidArgument
        }
        Ok(Err(FbcapError::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside fbcap");
            FbcapStatus::Panic
        }
    }
}

enum FbcapError {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for FbcapError {
    fn from(e: Error) -> Self {
        FbcapError::Core(e)
    }
}

fn opts(tol: f64) -> CapacityOptions {
    if tol > 0.0 {
        CapacityOptions::with_tol(tol)
    } else {
        CapacityOptions::default()
    }
}

unsafe fn model_ref<'a>(h: *const FbcapModel) -> Result<&'a ChannelModel, FbcapError> {
    h.as_ref().map(|m| &m.inner).ok_or(FbcapError::Null("model"))
}

unsafe fn emit_model(out: *mut *mut FbcapModel, m: ChannelModel) -> Result<(), FbcapError> {
    if out.is_null() {
        return Err(FbcapError::Null("out"));
    }
    *out = Box::into_raw(Box::new(FbcapModel { inner: m }));
    Ok(())
}

/// Message for the most recent failure on this thread, or NULL.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fbcap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fbcap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a model from its JSON description.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_model_from_json(json: *const c_char, out: *mut *mut FbcapModel) -> FbcapStatus {
    guard(|| {
        if json.is_null() {
            return Err(FbcapError::Null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| FbcapError::Arg(format!("json is not UTF-8: {e}")))?;
        emit_model(out, ChannelModel::from_json_str(text)?)
    })
}

/// AR(1) noise channel `y_i = x_i + z_i`, `z_i = beta z_{i-1} + w_i`.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_model_ar1(beta: f64, out: *mut *mut FbcapModel) -> FbcapStatus {
    guard(|| emit_model(out, model::make_ar1_channel(Ar1Params::new(beta))?))
}

/// Memoryless AWGN channel `y = sqrt(snr) x + v` with unit noise variance.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_model_awgn(snr: f64, out: *mut *mut FbcapModel) -> FbcapStatus {
    guard(|| emit_model(out, ChannelModel::awgn(snr)?))
}

/// Copy of `model` with the feedback delayed by `delay` steps.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_model_delayed(
    model: *const FbcapModel,
    delay: usize,
    out: *mut *mut FbcapModel,
) -> FbcapStatus {
    guard(|| {
        let m = model_ref(model)?;
        emit_model(out, model::make_delayed(m, delay)?)
    })
}

/// State, input and output dimensions of `model`.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbcap_model_dims(
    model: *const FbcapModel,
    n: *mut usize,
    m: *mut usize,
    p: *mut usize,
) -> FbcapStatus {
    guard(|| {
        let d = model_ref(model)?.dims;
        if n.is_null() || m.is_null() || p.is_null() {
            return Err(FbcapError::Null("dims out"));
        }
        *n = d.n;
        *m = d.m;
        *p = d.p;
        Ok(())
    })
}

/// Serialize `model` to JSON. Free the result with `fbcap_string_free`.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_model_to_json(model: *const FbcapModel, out: *mut *mut c_char) -> FbcapStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(FbcapError::Null("out"));
        }
        let s = CString::new(m.to_json()).map_err(|e| FbcapError::Arg(e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn fbcap_model_free(model: *mut FbcapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn fbcap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Stationary feedback capacity under average power `power`.
/// A non-positive `tol` selects the default solver tolerance.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_stationary_capacity(
    model: *const FbcapModel,
    power: f64,
    tol: f64,
    out: *mut FbcapCapacity,
) -> FbcapStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(FbcapError::Null("out"));
        }
        let sol = capacity::stationary_capacity(m, power, &opts(tol))?;
        *out = FbcapCapacity {
            rate_nats: sol.rate_nats,
            rate_bits: sol.rate_bits,
            kkt_residual: sol.kkt_residual,
            min_lmi_eig: sol.min_lmi_eig,
            closed_loop_detectable: sol.closed_loop_detectable,
        };
        Ok(())
    })
}

/// Normalized n-step feedback rate `C_n / n` in bits.
///
/// # Safety
/// `model` must be a live handle and `out_bits` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_finite_horizon_capacity(
    model: *const FbcapModel,
    power: f64,
    n: usize,
    tol: f64,
    out_bits: *mut f64,
) -> FbcapStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out_bits.is_null() {
            return Err(FbcapError::Null("out_bits"));
        }
        let sol = capacity::finite_horizon_capacity(m, power, n, &opts(tol))?;
        *out_bits = sol.normalized_rate_bits();
        Ok(())
    })
}

/// Closed-form feedback capacity of the unit-gain AR(1) channel, in bits.
///
/// # Safety
/// `out_bits` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_ar1_oracle(beta: f64, power: f64, out_bits: *mut f64) -> FbcapStatus {
    guard(|| {
        if out_bits.is_null() {
            return Err(FbcapError::Null("out_bits"));
        }
        *out_bits = capacity::ar1_capacity_oracle(beta, power)?;
        Ok(())
    })
}

/// Water-filling capacity without feedback for AR(1) noise, in bits.
///
/// # Safety
/// `out_bits` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcap_waterfill_nofb(beta: f64, power: f64, grid: usize, out_bits: *mut f64) -> FbcapStatus {
    guard(|| {
        if out_bits.is_null() {
            return Err(FbcapError::Null("out_bits"));
        }
        let nats = capacity::waterfill_nofb(Ar1Params::new(beta), power, grid)?;
        *out_bits = nats / std::f64::consts::LN_2;
        Ok(())
    })
}

/// Detectability of `(A, C)` with `A` n-by-n and `C` q-by-n, both row-major.
/// Writes the PBH and LMI verdicts separately.
///
/// # Safety
/// `a` must point to `n*n` doubles, `c` to `q*n` doubles, and the out
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fbcap_detectable(
    a: *const f64,
    n: usize,
    c: *const f64,
    q: usize,
    out_pbh: *mut bool,
    out_lmi: *mut bool,
) -> FbcapStatus {
    guard(|| {
        if a.is_null() || (c.is_null() && q * n > 0) || out_pbh.is_null() || out_lmi.is_null() {
            return Err(FbcapError::Null("detectable argument"));
        }
        if n == 0 {
            return Err(FbcapError::Arg("n must be positive".into()));
        }
        let am = Mat::from_row_slice(n, n, std::slice::from_raw_parts(a, n * n));
        let cm = if q == 0 {
            Mat::zeros(0, n)
        } else {
            Mat::from_row_slice(q, n, std::slice::from_raw_parts(c, q * n))
        };
        *out_pbh = detect::detectable_pbh(&am, &cm, detect::PBH_TOL).detectable;
        *out_lmi = detect::detectable_lmi(&am, &cm)?.detectable;
        Ok(())
    })
}
