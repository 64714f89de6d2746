//! C ABI over the memory bank, keyword pyramid, and metrics.
//!
//! Conventions: functions return [`PyramemStatus`] and write results
//! through out-pointers; `PYRAMEM_STATUS_OK` is zero. Banks are opaque
//! handles created by this library and released with
//! [`pyramem_bank_free`]. Strings are NUL-terminated UTF-8. On any
//! non-OK status, [`pyramem_last_error_message`] returns a
//! thread-local description of the failure.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;

use libc::{c_char, c_double};

use pyramem::error::Error;
use pyramem::metrics;
use pyramem::pyramid::build_pyramid;
use pyramem::store::{MemoryBank, MemoryId};

/// Result codes for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramemStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Input rejected by a validation rule (empty text, empty list, ...).
    Validation = 3,
    /// A referenced memory id does not exist.
    NotFound = 4,
    /// Filesystem failure while loading or saving.
    Io = 5,
    /// Malformed or version-incompatible snapshot file.
    Parse = 6,
    /// The metric is undefined for this input (e.g. empty references).
    Undefined = 7,
    /// Any other internal failure.
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: PyramemStatus, message: &str) -> PyramemStatus {
    set_error(message);
    status
}

fn classify(error: &Error) -> PyramemStatus {
    match error {
        Error::Validation(_) | Error::EmptyPrompt(_) => PyramemStatus::Validation,
        Error::UnknownMemory(_) => PyramemStatus::NotFound,
        Error::Io { .. } => PyramemStatus::Io,
        Error::MalformedSnapshot(_) | Error::VersionMismatch { .. } => PyramemStatus::Parse,
        Error::UndefinedMetric(_) => PyramemStatus::Undefined,
        _ => PyramemStatus::Internal,
    }
}

fn fail_with(error: Error) -> PyramemStatus {
    let status = classify(&error);
    set_error(&error.to_string());
    status
}

/// Opaque memory-bank handle.
pub struct PyramemBank {
    inner: MemoryBank,
}

/// Borrow a C string argument.
///
/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn arg_str<'a>(ptr: *const c_char) -> Result<&'a str, PyramemStatus> {
    if ptr.is_null() {
        return Err(fail(PyramemStatus::NullArgument, "string argument is NULL"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(PyramemStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Collect a `char**` argument into owned strings.
///
/// # Safety
/// `ptr` must point to `len` valid C strings (or be NULL when `len` is 0).
unsafe fn arg_str_list(
    ptr: *const *const c_char,
    len: usize,
) -> Result<Vec<String>, PyramemStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if ptr.is_null() {
        return Err(fail(PyramemStatus::NullArgument, "string list is NULL"));
    }
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let item = *ptr.add(i);
        out.push(arg_str(item)?.to_string());
    }
    Ok(out)
}

/// Message for the most recent failure on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pyramem_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Create an empty bank. Release with [`pyramem_bank_free`].
#[no_mangle]
pub extern "C" fn pyramem_bank_new() -> *mut PyramemBank {
    Box::into_raw(Box::new(PyramemBank {
        inner: MemoryBank::new(),
    }))
}

/// Free a bank handle. NULL is a no-op.
///
/// # Safety
/// `bank` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_free(bank: *mut PyramemBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Load a bank from a snapshot file.
///
/// # Safety
/// `path` must be a valid C string; `out_bank` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_load(
    path: *const c_char,
    out_bank: *mut *mut PyramemBank,
) -> PyramemStatus {
    if out_bank.is_null() {
        return fail(PyramemStatus::NullArgument, "out_bank is NULL");
    }
    let path = match arg_str(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match MemoryBank::load(Path::new(path)) {
        Ok(inner) => {
            *out_bank = Box::into_raw(Box::new(PyramemBank { inner }));
            PyramemStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Write the bank to a snapshot file.
///
/// # Safety
/// `bank` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_save(
    bank: *const PyramemBank,
    path: *const c_char,
) -> PyramemStatus {
    let Some(bank) = bank.as_ref() else {
        return fail(PyramemStatus::NullArgument, "bank is NULL");
    };
    let path = match arg_str(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match bank.inner.snapshot(Path::new(path)) {
        Ok(()) => PyramemStatus::Ok,
        Err(e) => fail_with(e),
    }
}

/// Append a record; writes the fresh id to `out_id`. `session` may be NULL.
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_add_record(
    bank: *mut PyramemBank,
    question: *const c_char,
    answer: *const c_char,
    session: *const c_char,
    out_id: *mut u64,
) -> PyramemStatus {
    let Some(bank) = bank.as_mut() else {
        return fail(PyramemStatus::NullArgument, "bank is NULL");
    };
    if out_id.is_null() {
        return fail(PyramemStatus::NullArgument, "out_id is NULL");
    }
    let question = match arg_str(question) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let answer = match arg_str(answer) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let session = if session.is_null() {
        None
    } else {
        match arg_str(session) {
            Ok(s) => Some(s),
            Err(status) => return status,
        }
    };
    match bank.inner.add_record(question, answer, session) {
        Ok(id) => {
            *out_id = id;
            PyramemStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Register keywords for a memory; writes the count of newly created
/// vocabulary entries to `out_new_entries` (may be NULL).
///
/// # Safety
/// `keywords` must point to `len` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_register_keywords(
    bank: *mut PyramemBank,
    memory_id: u64,
    keywords: *const *const c_char,
    len: usize,
    out_new_entries: *mut usize,
) -> PyramemStatus {
    let Some(bank) = bank.as_mut() else {
        return fail(PyramemStatus::NullArgument, "bank is NULL");
    };
    let keywords = match arg_str_list(keywords, len) {
        Ok(k) => k,
        Err(status) => return status,
    };
    match bank.inner.register_keywords(memory_id, &keywords) {
        Ok(outcome) => {
            if !out_new_entries.is_null() {
                *out_new_entries = outcome.new_entries.len();
            }
            PyramemStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Number of stored records.
///
/// # Safety
/// `bank` must be a live handle or NULL (NULL yields 0).
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_record_count(bank: *const PyramemBank) -> u64 {
    bank.as_ref().map_or(0, |b| b.inner.len() as u64)
}

/// Number of vocabulary entries.
///
/// # Safety
/// `bank` must be a live handle or NULL (NULL yields 0).
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_vocabulary_len(bank: *const PyramemBank) -> u64 {
    bank.as_ref().map_or(0, |b| b.inner.vocabulary().len() as u64)
}

/// Posting list for a keyword. Writes a malloc'd id array (release with
/// [`pyramem_ids_free`]); unknown keywords yield an empty list.
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_bank_associated_memories(
    bank: *const PyramemBank,
    keyword: *const c_char,
    out_ids: *mut *mut u64,
    out_len: *mut usize,
) -> PyramemStatus {
    let Some(bank) = bank.as_ref() else {
        return fail(PyramemStatus::NullArgument, "bank is NULL");
    };
    if out_ids.is_null() || out_len.is_null() {
        return fail(PyramemStatus::NullArgument, "out pointer is NULL");
    }
    let keyword = match arg_str(keyword) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let ids: Vec<MemoryId> = bank.inner.associated_memories(keyword).to_vec();
    *out_len = ids.len();
    *out_ids = if ids.is_empty() {
        std::ptr::null_mut()
    } else {
        let mut boxed = ids.into_boxed_slice();
        let ptr = boxed.as_mut_ptr();
        std::mem::forget(boxed);
        ptr
    };
    PyramemStatus::Ok
}

/// Release an id array returned by [`pyramem_bank_associated_memories`].
///
/// # Safety
/// `ids`/`len` must come from that call, unmodified.
#[no_mangle]
pub unsafe extern "C" fn pyramem_ids_free(ids: *mut u64, len: usize) {
    if !ids.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(ids, len)));
    }
}

/// Build the keyword pyramid for the given keywords and return it as a
/// JSON document (levels, groups, and traversal order). Release the
/// string with [`pyramem_string_free`].
///
/// # Safety
/// `keywords` must point to `len` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn pyramem_pyramid_json(
    bank: *const PyramemBank,
    keywords: *const *const c_char,
    len: usize,
    out_json: *mut *mut c_char,
) -> PyramemStatus {
    let Some(bank) = bank.as_ref() else {
        return fail(PyramemStatus::NullArgument, "bank is NULL");
    };
    if out_json.is_null() {
        return fail(PyramemStatus::NullArgument, "out_json is NULL");
    }
    let keywords = match arg_str_list(keywords, len) {
        Ok(k) => k,
        Err(status) => return status,
    };
    if keywords.is_empty() {
        return fail(PyramemStatus::Validation, "keyword list is empty");
    }
    let pyramid = build_pyramid(&keywords, bank.inner.mapping());
    let dump = serde_json::json!({
        "query_keywords": pyramid.query_keywords,
        "levels": pyramid.levels(),
        "traversal": pyramid.traversal().collect::<Vec<_>>(),
    });
    let text = serde_json::to_string(&dump).unwrap_or_default();
    match CString::new(text) {
        Ok(s) => {
            *out_json = s.into_raw();
            PyramemStatus::Ok
        }
        Err(_) => fail(PyramemStatus::Internal, "pyramid JSON contained NUL"),
    }
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library, unmodified and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pyramem_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn multi_ref_metric(
    prediction: *const c_char,
    references: *const *const c_char,
    len: usize,
    out_score: *mut c_double,
    metric: impl Fn(&str, &[&str]) -> Result<f64, Error>,
) -> PyramemStatus {
    if out_score.is_null() {
        return fail(PyramemStatus::NullArgument, "out_score is NULL");
    }
    let prediction = match arg_str(prediction) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let refs = match arg_str_list(references, len) {
        Ok(r) => r,
        Err(status) => return status,
    };
    let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
    match metric(prediction, &refs) {
        Ok(score) => {
            *out_score = score;
            PyramemStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Token-set F1, maximum over references.
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_f1(
    prediction: *const c_char,
    references: *const *const c_char,
    len: usize,
    out_score: *mut c_double,
) -> PyramemStatus {
    multi_ref_metric(prediction, references, len, out_score, metrics::f1)
}

/// BLEU-1 with brevity penalty.
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_bleu1(
    prediction: *const c_char,
    references: *const *const c_char,
    len: usize,
    out_score: *mut c_double,
) -> PyramemStatus {
    multi_ref_metric(prediction, references, len, out_score, metrics::bleu1)
}

/// ROUGE-L. Pass `beta <= 0` for the default weight (1.2).
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_rouge_l(
    prediction: *const c_char,
    reference: *const c_char,
    beta: c_double,
    out_score: *mut c_double,
) -> PyramemStatus {
    if out_score.is_null() {
        return fail(PyramemStatus::NullArgument, "out_score is NULL");
    }
    let prediction = match arg_str(prediction) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let reference = match arg_str(reference) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let beta = if beta > 0.0 {
        beta
    } else {
        metrics::ROUGE_BETA_DEFAULT
    };
    match metrics::rouge_l_with_beta(prediction, reference, beta) {
        Ok(score) => {
            *out_score = score;
            PyramemStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// ROUGE-2 bigram overlap.
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_rouge_2(
    prediction: *const c_char,
    reference: *const c_char,
    out_score: *mut c_double,
) -> PyramemStatus {
    if out_score.is_null() {
        return fail(PyramemStatus::NullArgument, "out_score is NULL");
    }
    let prediction = match arg_str(prediction) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let reference = match arg_str(reference) {
        Ok(s) => s,
        Err(status) => return status,
    };
    *out_score = metrics::rouge_2(prediction, reference);
    PyramemStatus::Ok
}

/// Exact-match METEOR.
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_meteor(
    prediction: *const c_char,
    reference: *const c_char,
    out_score: *mut c_double,
) -> PyramemStatus {
    if out_score.is_null() {
        return fail(PyramemStatus::NullArgument, "out_score is NULL");
    }
    let prediction = match arg_str(prediction) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let reference = match arg_str(reference) {
        Ok(s) => s,
        Err(status) => return status,
    };
    *out_score = metrics::meteor(prediction, reference);
    PyramemStatus::Ok
}

/// Token estimate `1.1*w + 0.35*s`.
///
/// # Safety
/// Pointer arguments must satisfy the conventions above.
#[no_mangle]
pub unsafe extern "C" fn pyramem_estimate_tokens(
    text: *const c_char,
    out_tokens: *mut c_double,
) -> PyramemStatus {
    if out_tokens.is_null() {
        return fail(PyramemStatus::NullArgument, "out_tokens is NULL");
    }
    let text = match arg_str(text) {
        Ok(s) => s,
        Err(status) => return status,
    };
    *out_tokens = metrics::estimate_tokens(text);
    PyramemStatus::Ok
}
