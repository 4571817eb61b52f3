//! C interface to the authentication pipeline.
//!
//! Every fallible call returns a [`DkStatus`]; on anything but `DK_STATUS_OK`
//! the message is available from [`dk_last_error`] on the same thread.
//! Systems are opaque handles created by `dk_system_load` or
//! `dk_system_from_bytes` and released with `dk_system_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use deepkey::container::Container;
use deepkey::dsp::design_bandpass;
use deepkey::pipeline::compose_frr;
use deepkey::{AuthReason, AuthRequest, DeepKeyError, Modality, Recording, System, Verdict};
use ndarray::Array2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Request = 4,
    Format = 5,
    Io = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkVerdict {
    Approve = 0,
    Deny = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkReason {
    Approved = 0,
    ImpostorFiltered = 1,
    IdMismatch = 2,
}

/// Outcome of `dk_authenticate`. Identities are only meaningful when the
/// matching `has_*` flag is set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DkDecision {
    pub verdict: DkVerdict,
    pub reason: DkReason,
    pub has_e_id: bool,
    pub e_id: u32,
    pub has_g_id: bool,
    pub g_id: u32,
    pub gate_score: f64,
}

/// Trained gate, identifiers and code banks.
pub struct DkSystem {
    inner: System,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DkStatus, msg: impl Into<String>) -> DkStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &DeepKeyError) -> DkStatus {
    match e {
        DeepKeyError::Parameter(_) | DeepKeyError::Config(_) => DkStatus::InvalidArgument,
        DeepKeyError::Data(_) | DeepKeyError::Shape(_) => DkStatus::Shape,
        DeepKeyError::Request(_) => DkStatus::Request,
        DeepKeyError::Format(_) => DkStatus::Format,
        DeepKeyError::Io(_) => DkStatus::Io,
        DeepKeyError::Numeric(_) | DeepKeyError::Training(_) => DkStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), DkStatus>) -> DkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DkStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DkStatus::Internal, "panic inside deepkey"),
    }
}

fn lift<T>(r: deepkey::Result<T>) -> Result<T, DkStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), DkStatus> {
    if p.is_null() {
        Err(fail(DkStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn recording(data: *const f64, rows: usize, modality: Modality) -> Result<Recording, DkStatus> {
    let name = modality.as_str();
    non_null(data, name)?;
    let d = modality.channels();
    let len = rows
        .checked_mul(d)
        .ok_or_else(|| fail(DkStatus::Shape, format!("{name}: {rows} rows overflow")))?;
    let values = slice::from_raw_parts(data, len).to_vec();
    let arr = Array2::from_shape_vec((rows, d), values).map_err(|e| fail(DkStatus::Shape, e.to_string()))?;
    lift(Recording::new(modality, modality.sample_rate(), arr, None))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Number of channels per instance: 14 for EEG, 27 for gait.
#[no_mangle]
pub extern "C" fn dk_eeg_channels() -> usize {
    Modality::Eeg.channels()
}

#[no_mangle]
pub extern "C" fn dk_gait_channels() -> usize {
    Modality::Gait.channels()
}

/// Loads a bundle written by `deepkey train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dk_system_load(path: *const c_char, out: *mut *mut DkSystem) -> DkStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(DkStatus::InvalidArgument, "path is not UTF-8"))?;
        let inner = lift(System::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(DkSystem { inner }));
        Ok(())
    })
}

/// Same as `dk_system_load` from an in-memory bundle.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_system_from_bytes(bytes: *const u8, len: usize, out: *mut *mut DkSystem) -> DkStatus {
    guard(|| {
        non_null(bytes, "bytes")?;
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let c = lift(Container::from_bytes(slice::from_raw_parts(bytes, len)))?;
        let inner = lift(System::from_container(&c))?;
        *out = Box::into_raw(Box::new(DkSystem { inner }));
        Ok(())
    })
}

/// # Safety
/// `system` must come from `dk_system_load`/`dk_system_from_bytes` and not be
/// freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn dk_system_free(system: *mut DkSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Enrolled subject ids. Writes at most `cap` ids to `ids` and the total count
/// to `count`; returns `DK_STATUS_BUFFER_TOO_SMALL` when `cap` is short.
///
/// # Safety
/// `system` must be a live handle, `ids` must hold `cap` values (may be NULL
/// when `cap` is 0) and `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_system_subjects(
    system: *const DkSystem,
    ids: *mut u32,
    cap: usize,
    count: *mut usize,
) -> DkStatus {
    guard(|| {
        non_null(system, "system")?;
        non_null(count, "count")?;
        let subjects = &(*system).inner.eeg.subjects;
        *count = subjects.len();
        if cap < subjects.len() {
            return Err(fail(
                DkStatus::BufferTooSmall,
                format!("need room for {} ids, got {cap}", subjects.len()),
            ));
        }
        if subjects.is_empty() {
            return Ok(());
        }
        non_null(ids, "ids")?;
        slice::from_raw_parts_mut(ids, subjects.len()).copy_from_slice(subjects);
        Ok(())
    })
}

/// Runs the gate, both identifiers and the consistency rule.
///
/// `eeg` is `eeg_rows` x 14 and `gait` is `gait_rows` x 27, both row-major.
/// A short or malformed request is `DK_STATUS_REQUEST`, never a denial.
///
/// # Safety
/// `system` must be a live handle, the arrays must hold the stated number of
/// values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_authenticate(
    system: *const DkSystem,
    eeg: *const f64,
    eeg_rows: usize,
    gait: *const f64,
    gait_rows: usize,
    out: *mut DkDecision,
) -> DkStatus {
    guard(|| {
        non_null(system, "system")?;
        non_null(out, "out")?;
        let req = lift(AuthRequest::new(
            recording(eeg, eeg_rows, Modality::Eeg)?,
            recording(gait, gait_rows, Modality::Gait)?,
        ))?;
        let d = lift((*system).inner.authenticate(&req))?;
        *out = DkDecision {
            verdict: match d.verdict {
                Verdict::Approve => DkVerdict::Approve,
                Verdict::Deny => DkVerdict::Deny,
            },
            reason: match d.reason {
                AuthReason::Approved => DkReason::Approved,
                AuthReason::ImpostorFiltered => DkReason::ImpostorFiltered,
                AuthReason::IdMismatch => DkReason::IdMismatch,
            },
            has_e_id: d.e_id.is_some(),
            e_id: d.e_id.unwrap_or(0),
            has_g_id: d.g_id.is_some(),
            g_id: d.g_id.unwrap_or(0),
            gate_score: d.gate_score,
        };
        Ok(())
    })
}

/// System FRR from the gate's FRR and the two identification accuracies.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_compose_frr(filter_frr: f64, gait_acc: f64, eeg_acc: f64, out: *mut f64) -> DkStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(compose_frr(filter_frr, gait_acc, eeg_acc))?;
        Ok(())
    })
}

/// Butterworth band-pass design. `b` and `a` each need `2 * order + 1` slots;
/// `len` is the capacity of each.
///
/// # Safety
/// `b` and `a` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dk_design_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    fs: f64,
    b: *mut f64,
    a: *mut f64,
    len: usize,
) -> DkStatus {
    guard(|| {
        non_null(b, "b")?;
        non_null(a, "a")?;
        let c = lift(design_bandpass(order, low_hz, high_hz, fs))?;
        if len < c.b.len() {
            return Err(fail(
                DkStatus::BufferTooSmall,
                format!("need {} coefficients, got {len}", c.b.len()),
            ));
        }
        slice::from_raw_parts_mut(b, c.b.len()).copy_from_slice(&c.b);
        slice::from_raw_parts_mut(a, c.a.len()).copy_from_slice(&c.a);
        Ok(())
    })
}
