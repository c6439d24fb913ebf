//! C ABI over the `modgap` core.
//!
//! Every function returns a [`ModgapStatus`]; results are written through out
//! pointers. Banks and transforms are opaque handles owned by the caller and
//! released with the matching `*_free` function. After a non-OK status,
//! [`modgap_last_error_message`] describes the failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use modgap::collapse::{fit_centralize, fit_delete};
use modgap::{
    corrupt::corrupt_bank, cosine_similarity, diagnostics::gap_report, load_bank, save_bank,
    BankFormat, CollapseTransform, CorruptConfig, Embedding, EmbeddingBank, Error, Modality,
};

pub const MODGAP_MODALITY_VISUAL: u32 = 0;
pub const MODGAP_MODALITY_TEXT: u32 = 1;

pub const MODGAP_FORMAT_JSONL: u32 = 0;
pub const MODGAP_FORMAT_BINARY: u32 = 1;

pub const MODGAP_COLLAPSE_CENTRALIZE: u32 = 0;
pub const MODGAP_COLLAPSE_DELETE: u32 = 1;

pub const MODGAP_NOISE_COSINE: u32 = 0;
pub const MODGAP_NOISE_GAUSSIAN: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModgapStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    DegenerateVector = 3,
    ParallelVector = 4,
    EmptyBank = 5,
    TaskMismatch = 6,
    Parameter = 7,
    TransformKind = 8,
    Format = 9,
    Divergence = 10,
    Config = 11,
    Io = 12,
    Utf8 = 13,
    Panic = 14,
}

/// Opaque embedding bank.
pub struct ModgapBank(EmbeddingBank);

/// Opaque fitted collapse transform.
pub struct ModgapTransform(CollapseTransform);

/// Scalar part of a gap report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ModgapGapSummary {
    pub dim: usize,
    pub gap_norm: f64,
    pub matched_pair_mean_cosine: f64,
    pub retrieval_top1_v2t: f64,
    pub retrieval_top1_t2v: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(ModgapStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Dimension(_) => ModgapStatus::Dimension,
            Error::DegenerateVector(_) => ModgapStatus::DegenerateVector,
            Error::ParallelVector => ModgapStatus::ParallelVector,
            Error::EmptyBank(_) => ModgapStatus::EmptyBank,
            Error::TaskMismatch(_) => ModgapStatus::TaskMismatch,
            Error::Parameter(_) => ModgapStatus::Parameter,
            Error::TransformKind { .. } => ModgapStatus::TransformKind,
            Error::Format { .. } => ModgapStatus::Format,
            Error::Divergence { .. } => ModgapStatus::Divergence,
            Error::Config(_) => ModgapStatus::Config,
            Error::Io { .. } => ModgapStatus::Io,
            Error::Stage { .. } => ModgapStatus::Parameter,
        };
        Fail(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Fail>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult) -> ModgapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            ModgapStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            ModgapStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ModgapStatus::NullPointer, format!("{what} is null"))
}

fn parameter(msg: String) -> Fail {
    Fail(ModgapStatus::Parameter, msg)
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ModgapStatus::Utf8, format!("{what} is not valid UTF-8")))
}

fn modality(code: u32) -> FfiResult<Modality> {
    match code {
        MODGAP_MODALITY_VISUAL => Ok(Modality::Visual),
        MODGAP_MODALITY_TEXT => Ok(Modality::Text),
        other => Err(parameter(format!("unknown modality code {other}"))),
    }
}

fn modality_code(m: Modality) -> u32 {
    match m {
        Modality::Visual => MODGAP_MODALITY_VISUAL,
        Modality::Text => MODGAP_MODALITY_TEXT,
    }
}

fn format(code: u32) -> FfiResult<BankFormat> {
    match code {
        MODGAP_FORMAT_JSONL => Ok(BankFormat::JsonLines),
        MODGAP_FORMAT_BINARY => Ok(BankFormat::Binary),
        other => Err(parameter(format!("unknown format code {other}"))),
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn modgap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates an empty bank.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_new(
    modality_code: u32,
    dim: usize,
    out: *mut *mut ModgapBank,
) -> ModgapStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let bank = EmbeddingBank::new(modality(modality_code)?, dim)?;
        *out = boxed(ModgapBank(bank));
        Ok(())
    })
}

/// Appends one row with task id `task_id`.
///
/// # Safety
/// `bank` must come from this library; `task_id` must be NUL-terminated;
/// `values` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_push(
    bank: *mut ModgapBank,
    task_id: *const c_char,
    values: *const f64,
    len: usize,
) -> ModgapStatus {
    guard(|| {
        let bank = out_ptr(bank, "bank")?;
        let task_id = string(task_id, "task_id")?;
        let values = slice(values, len, "values")?;
        bank.0.push(task_id, values)?;
        Ok(())
    })
}

/// Reads a bank from disk.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_load(
    path: *const c_char,
    format_code: u32,
    out: *mut *mut ModgapBank,
) -> ModgapStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(string(path, "path")?);
        let bank = load_bank(&path, format(format_code)?)?;
        *out = boxed(ModgapBank(bank));
        Ok(())
    })
}

/// Writes a bank to disk.
///
/// # Safety
/// `bank` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_save(
    bank: *const ModgapBank,
    path: *const c_char,
    format_code: u32,
) -> ModgapStatus {
    guard(|| {
        let bank = borrow(bank, "bank")?;
        let path = PathBuf::from(string(path, "path")?);
        save_bank(&bank.0, &path, format(format_code)?)?;
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_len(bank: *const ModgapBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

/// Row dimension, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_dim(bank: *const ModgapBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.dim())
}

/// # Safety
/// `bank` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_modality(
    bank: *const ModgapBank,
    out: *mut u32,
) -> ModgapStatus {
    guard(|| {
        let bank = borrow(bank, "bank")?;
        *out_ptr(out, "out")? = modality_code(bank.0.modality());
        Ok(())
    })
}

/// Copies row `index` into `out`, which must hold exactly `dim` doubles.
///
/// # Safety
/// `bank` must come from this library; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_row(
    bank: *const ModgapBank,
    index: usize,
    out: *mut f64,
    len: usize,
) -> ModgapStatus {
    guard(|| {
        let bank = borrow(bank, "bank")?;
        if index >= bank.0.len() {
            return Err(parameter(format!(
                "row {index} out of range ({} rows)",
                bank.0.len()
            )));
        }
        copy_out(bank.0.row(index), out, len)
    })
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> FfiResult {
    if len != values.len() {
        return Err(Fail(
            ModgapStatus::Dimension,
            format!("output buffer holds {len} values, need {}", values.len()),
        ));
    }
    if len > 0 {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, len);
    }
    Ok(())
}

/// # Safety
/// `bank` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn modgap_bank_free(bank: *mut ModgapBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_cosine_similarity(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> ModgapStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = Embedding::new(slice(a, len, "a")?.to_vec(), Modality::Visual)?;
        let b = Embedding::new(slice(b, len, "b")?.to_vec(), Modality::Visual)?;
        *out = cosine_similarity(&a, &b)?;
        Ok(())
    })
}

/// Gap statistics of a visual/text bank pair.
///
/// # Safety
/// Both banks must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_gap_report(
    bank_v: *const ModgapBank,
    bank_l: *const ModgapBank,
    out: *mut ModgapGapSummary,
) -> ModgapStatus {
    guard(|| {
        let v = borrow(bank_v, "bank_v")?;
        let l = borrow(bank_l, "bank_l")?;
        let out = out_ptr(out, "out")?;
        let r = gap_report(&v.0, &l.0)?;
        *out = ModgapGapSummary {
            dim: r.dim,
            gap_norm: r.gap_norm,
            matched_pair_mean_cosine: r.matched_pair_mean_cosine,
            retrieval_top1_v2t: r.retrieval_top1_v2t,
            retrieval_top1_t2v: r.retrieval_top1_t2v,
        };
        Ok(())
    })
}

/// Fits a collapse transform on reference banks. `k` is ignored for
/// centralize.
///
/// # Safety
/// Both banks must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_transform_fit(
    kind: u32,
    reference_v: *const ModgapBank,
    reference_l: *const ModgapBank,
    k: usize,
    out: *mut *mut ModgapTransform,
) -> ModgapStatus {
    guard(|| {
        let v = borrow(reference_v, "reference_v")?;
        let l = borrow(reference_l, "reference_l")?;
        let out = out_ptr(out, "out")?;
        let t = match kind {
            MODGAP_COLLAPSE_CENTRALIZE => fit_centralize(&v.0, &l.0)?,
            MODGAP_COLLAPSE_DELETE => fit_delete(&v.0, &l.0, k)?,
            other => return Err(parameter(format!("unknown collapse kind {other}"))),
        };
        *out = boxed(ModgapTransform(t));
        Ok(())
    })
}

/// Width of the transform's output.
///
/// # Safety
/// `transform` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn modgap_transform_output_dim(transform: *const ModgapTransform) -> usize {
    transform.as_ref().map_or(0, |t| t.0.output_dim())
}

/// Applies the transform to one vector. `out` must hold exactly
/// `modgap_transform_output_dim(transform)` doubles.
///
/// # Safety
/// `values` must point to `len` doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modgap_transform_apply(
    transform: *const ModgapTransform,
    values: *const f64,
    len: usize,
    modality_code: u32,
    out: *mut f64,
    out_len: usize,
) -> ModgapStatus {
    guard(|| {
        let t = borrow(transform, "transform")?;
        let values = slice(values, len, "values")?;
        let y = t.0.apply_values(values, modality(modality_code)?)?;
        copy_out(&y, out, out_len)
    })
}

/// Applies the transform to every row of a bank, producing a new bank.
///
/// # Safety
/// `transform` and `bank` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_transform_apply_bank(
    transform: *const ModgapTransform,
    bank: *const ModgapBank,
    out: *mut *mut ModgapBank,
) -> ModgapStatus {
    guard(|| {
        let t = borrow(transform, "transform")?;
        let bank = borrow(bank, "bank")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(ModgapBank(t.0.apply_bank(&bank.0)?));
        Ok(())
    })
}

/// Serializes the transform; release the string with [`modgap_string_free`].
///
/// # Safety
/// `transform` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_transform_to_json(
    transform: *const ModgapTransform,
    out: *mut *mut c_char,
) -> ModgapStatus {
    guard(|| {
        let t = borrow(transform, "transform")?;
        let out = out_ptr(out, "out")?;
        let json = CString::new(t.0.to_json()).map_err(|e| parameter(e.to_string()))?;
        *out = json.into_raw();
        Ok(())
    })
}

/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_transform_from_json(
    json: *const c_char,
    out: *mut *mut ModgapTransform,
) -> ModgapStatus {
    guard(|| {
        let json = string(json, "json")?;
        let out = out_ptr(out, "out")?;
        *out = boxed(ModgapTransform(CollapseTransform::from_json(json)?));
        Ok(())
    })
}

/// # Safety
/// `transform` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn modgap_transform_free(transform: *mut ModgapTransform) {
    if !transform.is_null() {
        drop(Box::from_raw(transform));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn modgap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Corrupts every row of `bank`. `strength` is alpha for cosine noise and the
/// standard deviation for Gaussian noise.
///
/// # Safety
/// `bank` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modgap_corrupt_bank(
    bank: *const ModgapBank,
    kind: u32,
    strength: f64,
    seed: u64,
    out: *mut *mut ModgapBank,
) -> ModgapStatus {
    guard(|| {
        let bank = borrow(bank, "bank")?;
        let out = out_ptr(out, "out")?;
        let cfg = match kind {
            MODGAP_NOISE_COSINE => CorruptConfig::cosine(strength, seed),
            MODGAP_NOISE_GAUSSIAN => CorruptConfig::gaussian(strength, seed),
            other => return Err(parameter(format!("unknown noise kind {other}"))),
        };
        *out = boxed(ModgapBank(corrupt_bank(&bank.0, &cfg)?));
        Ok(())
    })
}
