//! C ABI over the trained-head deployment surface: load or initialize an
//! uncertainty head, score embedding batches, save. Handles are opaque;
//! every fallible call returns a status code and leaves a human-readable
//! message in thread-local storage for `uhead_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use uhead::error::Error;
use uhead::head::UncertaintyHead;
use uhead::matrix::Matrix;

/// Outcome of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UheadStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument violated a documented precondition.
    InvalidArgument = 2,
    /// The filesystem failed underneath us.
    IoError = 3,
    /// A file exists but does not match its documented layout.
    MalformedFile = 4,
    /// The library panicked; state may be stale but memory is intact.
    Panic = 5,
}

/// Trained uncertainty head (opaque).
pub struct UheadHead {
    inner: UncertaintyHead<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained a NUL byte").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &Error) -> UheadStatus {
    match err {
        Error::Io { .. } => UheadStatus::IoError,
        Error::Format { .. } => UheadStatus::MalformedFile,
        _ => UheadStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> UheadStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Runs `f` with panics converted to `UheadStatus::Panic`.
fn guarded<F: FnOnce() -> UheadStatus>(f: F) -> UheadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            UheadStatus::Panic
        }
    }
}

/// Last error message on this thread, or null when the most recent call
/// succeeded. The pointer stays valid until the next library call on the
/// same thread.
#[no_mangle]
pub extern "C" fn uhead_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Library version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn uhead_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn read_path(path: *const c_char) -> Result<&'static Path, UheadStatus> {
    if path.is_null() {
        set_error("path is null".to_string());
        return Err(UheadStatus::NullArgument);
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8".to_string());
            Err(UheadStatus::InvalidArgument)
        }
    }
}

/// Creates a freshly initialized head (same initializer as training runs
/// use) and writes the handle to `out`.
///
/// # Safety
/// `out` must be a valid pointer to an `UheadHead*` slot.
#[no_mangle]
pub unsafe extern "C" fn uhead_head_init(
    input_dim: u32,
    hidden_dim: u32,
    seed: u64,
    out: *mut *mut UheadHead,
) -> UheadStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is null".to_string());
            return UheadStatus::NullArgument;
        }
        match UncertaintyHead::init(input_dim as usize, hidden_dim as usize, seed) {
            Ok(inner) => {
                clear_error();
                *out = Box::into_raw(Box::new(UheadHead { inner }));
                UheadStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads a head checkpoint written by `uhead_head_save` or the CLI trainer
/// and writes the handle to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer to
/// an `UheadHead*` slot.
#[no_mangle]
pub unsafe extern "C" fn uhead_head_load(
    path: *const c_char,
    out: *mut *mut UheadHead,
) -> UheadStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is null".to_string());
            return UheadStatus::NullArgument;
        }
        let path = match read_path(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match UncertaintyHead::load(path) {
            Ok(inner) => {
                clear_error();
                *out = Box::into_raw(Box::new(UheadHead { inner }));
                UheadStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Saves the head to `path` (atomically: temp file + rename).
///
/// # Safety
/// `head` must be a live handle from this library; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn uhead_head_save(
    head: *const UheadHead,
    path: *const c_char,
) -> UheadStatus {
    guarded(|| {
        if head.is_null() {
            set_error("head is null".to_string());
            return UheadStatus::NullArgument;
        }
        let path = match read_path(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match (*head).inner.save(path) {
            Ok(()) => {
                clear_error();
                UheadStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Embedding width the head expects, or 0 for a null handle.
///
/// # Safety
/// `head` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn uhead_head_input_dim(head: *const UheadHead) -> u32 {
    if head.is_null() {
        return 0;
    }
    (*head).inner.input_dim() as u32
}

/// Hidden-layer width, or 0 for a null handle.
///
/// # Safety
/// `head` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn uhead_head_hidden_dim(head: *const UheadHead) -> u32 {
    if head.is_null() {
        return 0;
    }
    (*head).inner.hidden_dim() as u32
}

/// Scores `n_rows` embeddings of width `dim` (row-major, contiguous) and
/// writes one nonnegative uncertainty per row to `out`.
///
/// # Safety
/// `head` must be a live handle; `embeddings` must point to
/// `n_rows * dim` readable floats; `out` must point to `n_rows` writable
/// floats; the regions must not overlap.
#[no_mangle]
pub unsafe extern "C" fn uhead_head_predict(
    head: *const UheadHead,
    embeddings: *const f32,
    n_rows: usize,
    dim: usize,
    out: *mut f32,
) -> UheadStatus {
    guarded(|| {
        if head.is_null() || embeddings.is_null() || out.is_null() {
            set_error("head, embeddings and out must all be non-null".to_string());
            return UheadStatus::NullArgument;
        }
        if n_rows == 0 {
            set_error("n_rows must be positive".to_string());
            return UheadStatus::InvalidArgument;
        }
        let data = std::slice::from_raw_parts(embeddings, n_rows * dim);
        let batch = match Matrix::from_vec(n_rows, dim, data.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match (*head).inner.predict(&batch) {
            Ok(scores) => {
                clear_error();
                std::ptr::copy_nonoverlapping(scores.as_ptr(), out, n_rows);
                UheadStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `head` must be null or a live handle from this library, and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uhead_head_free(head: *mut UheadHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}
