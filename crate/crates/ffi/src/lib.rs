//! C interface to explicit control laws produced by `reddpc synthesize`.
//!
//! Laws are opaque handles. Every fallible call returns a [`ReddpcStatus`];
//! on failure the message is available from [`reddpc_last_error`] on the
//! same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use reddpc::explicit::{import_law, law_from_json, ExplicitLaw};
use reddpc::Error;

/// Opaque explicit control law.
pub struct ReddpcLaw {
    law: ExplicitLaw,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReddpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Checksum = 5,
    Version = 6,
    Dimension = 7,
    NoRegion = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: ReddpcStatus, msg: impl Into<String>) -> ReddpcStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> ReddpcStatus {
    match e {
        Error::Io { .. } => ReddpcStatus::Io,
        Error::Json(_) => ReddpcStatus::Format,
        Error::Fingerprint { .. } => ReddpcStatus::Checksum,
        Error::Version { .. } => ReddpcStatus::Version,
        Error::NoRegion => ReddpcStatus::NoRegion,
        _ => ReddpcStatus::Dimension,
    }
}

fn guarded(f: impl FnOnce() -> ReddpcStatus) -> ReddpcStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(ReddpcStatus::Panic, "internal panic"))
}

unsafe fn load_with(
    text: *const c_char,
    out: *mut *mut ReddpcLaw,
    load: fn(&str) -> reddpc::Result<ExplicitLaw>,
) -> ReddpcStatus {
    if text.is_null() || out.is_null() {
        return fail(ReddpcStatus::NullPointer, "null argument");
    }
    *out = ptr::null_mut();
    let s = match CStr::from_ptr(text).to_str() {
        Ok(s) => s,
        Err(e) => return fail(ReddpcStatus::InvalidUtf8, e.to_string()),
    };
    match load(s) {
        Ok(law) => {
            *out = Box::into_raw(Box::new(ReddpcLaw { law }));
            ReddpcStatus::Ok
        }
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

/// Load a law from a JSON file. On success `*out` owns a handle that must be
/// released with [`reddpc_law_free`]; on failure it is set to null.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn reddpc_law_load(path: *const c_char, out: *mut *mut ReddpcLaw) -> ReddpcStatus {
    guarded(|| load_with(path, out, |p| import_law(p)))
}

/// Load a law from JSON text held in memory.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn reddpc_law_from_json(json: *const c_char, out: *mut *mut ReddpcLaw) -> ReddpcStatus {
    guarded(|| load_with(json, out, law_from_json))
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `law` must come from a load function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reddpc_law_free(law: *mut ReddpcLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// Number of control inputs, or 0 for a null handle.
///
/// # Safety
/// `law` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn reddpc_law_input_dim(law: *const ReddpcLaw) -> usize {
    law.as_ref().map_or(0, |l| l.law.m)
}

/// Length of the parameter vector, or 0 for a null handle.
///
/// # Safety
/// `law` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn reddpc_law_param_dim(law: *const ReddpcLaw) -> usize {
    law.as_ref().map_or(0, |l| l.law.n_chi())
}

/// Number of regions, or 0 for a null handle.
///
/// # Safety
/// `law` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn reddpc_law_region_count(law: *const ReddpcLaw) -> usize {
    law.as_ref().map_or(0, |l| l.law.regions.len())
}

/// Evaluate the law at `chi` (length `n_chi`) and write `n_u` inputs to `u`.
/// The index of the matching region goes to `region` when it is non-null.
///
/// # Safety
/// `chi` and `u` must point to at least `n_chi` and `n_u` doubles.
#[no_mangle]
pub unsafe extern "C" fn reddpc_law_evaluate(
    law: *const ReddpcLaw,
    chi: *const f64,
    n_chi: usize,
    u: *mut f64,
    n_u: usize,
    region: *mut usize,
) -> ReddpcStatus {
    guarded(|| {
        let Some(l) = law.as_ref() else {
            return fail(ReddpcStatus::NullPointer, "null law");
        };
        if chi.is_null() || u.is_null() {
            return fail(ReddpcStatus::NullPointer, "null buffer");
        }
        let chi = std::slice::from_raw_parts(chi, n_chi);
        let u = std::slice::from_raw_parts_mut(u, n_u);
        match l.law.evaluate_into(chi, u) {
            Ok(idx) => {
                if !region.is_null() {
                    *region = idx;
                }
                ReddpcStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn reddpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn reddpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
