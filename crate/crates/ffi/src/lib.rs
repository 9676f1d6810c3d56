//! C ABI over the biobridge core.
//!
//! Models are opaque `BbModel` handles created by `bb_model_new` or
//! `bb_model_load` and released with `bb_model_free`. Every fallible call
//! returns a `BbStatus`; on failure `bb_last_error` holds a message for the
//! calling thread. Output buffers follow one convention: the caller passes a
//! buffer and its capacity, the callee always stores the required length and
//! returns `BB_STATUS_BUFFER_TOO_SMALL` when the capacity falls short.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use biobridge::qformer::similarity_matrix;
use biobridge::train::eval::generate_answer;
use biobridge::train::{Model, ModelConfig, ProteinMode};
use biobridge::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Io = 4,
    Parse = 5,
    InvalidInput = 6,
    Numeric = 7,
    Checkpoint = 8,
    Config = 9,
    Internal = 10,
}

/// Opaque model handle.
pub struct BbModel {
    inner: Model,
}

struct Failure(BbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => BbStatus::Io,
            Error::Parse { .. } | Error::Json(_) => BbStatus::Parse,
            Error::Shape { .. } | Error::Invalid(_) | Error::TooLong { .. } => BbStatus::InvalidInput,
            Error::Numeric { .. } | Error::NonFiniteLoss { .. } => BbStatus::Numeric,
            Error::Checkpoint(_) => BbStatus::Checkpoint,
            Error::Config(_) => BbStatus::Config,
            _ => BbStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> BbStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure(BbStatus::Internal, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => {
            set_last_error("");
            BbStatus::Ok
        }
        Err(Failure(status, msg)) => {
            set_last_error(&msg);
            status
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(BbStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(BbStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn model_arg<'a>(p: *const BbModel) -> FfiResult<&'a Model> {
    p.as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| Failure(BbStatus::NullPointer, "model is null".into()))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(BbStatus::NullPointer, format!("{name} is null")))
}

/// Copies `values` into `out` (capacity `cap`) after storing the length.
unsafe fn write_f64s(values: &[f64], out: *mut f64, cap: usize, len: *mut usize) -> FfiResult<()> {
    *out_arg(len, "len")? = values.len();
    if cap < values.len() {
        return Err(Failure(
            BbStatus::BufferTooSmall,
            format!("need {} values, capacity {cap}", values.len()),
        ));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(Failure(BbStatus::NullPointer, "out is null".into()));
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Copies `text` plus a terminating NUL into `out`; `len` receives the byte
/// count including the NUL.
unsafe fn write_str(text: &str, out: *mut c_char, cap: usize, len: *mut usize) -> FfiResult<()> {
    let bytes = CString::new(text.replace('\0', " "))
        .unwrap_or_default()
        .into_bytes_with_nul();
    *out_arg(len, "len")? = bytes.len();
    if cap < bytes.len() {
        return Err(Failure(
            BbStatus::BufferTooSmall,
            format!("need {} bytes, capacity {cap}", bytes.len()),
        ));
    }
    if out.is_null() {
        return Err(Failure(BbStatus::NullPointer, "out is null".into()));
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), out, bytes.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a freshly initialized model. `config_json` may be null for the
/// default architecture.
///
/// # Safety
/// `config_json` must be null or a valid NUL-terminated string; `out` must
/// point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bb_model_new(config_json: *const c_char, seed: u64, out: *mut *mut BbModel) -> BbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = if config_json.is_null() {
            ModelConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Failure(BbStatus::Parse, format!("model config: {e}")))?
        };
        let model = Model::new(cfg, seed)?;
        *out = Box::into_raw(Box::new(BbModel { inner: model }));
        Ok(())
    })
}

/// Loads a checkpoint file or run directory.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must point to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bb_model_load(path: *const c_char, out: *mut *mut BbModel) -> BbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = Model::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(BbModel { inner: model }));
        Ok(())
    })
}

/// Writes the model checkpoint into directory `dir`.
///
/// # Safety
/// `model` must be a live handle and `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bb_model_save(model: *const BbModel, dir: *const c_char) -> BbStatus {
    guard(|| {
        model_arg(model)?.save(Path::new(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bb_model_free(model: *mut BbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of query vectors and their width in the alignment space.
///
/// # Safety
/// `model` must be a live handle; `queries` and `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_latent_shape(
    model: *const BbModel,
    queries: *mut usize,
    dim: *mut usize,
) -> BbStatus {
    guard(|| {
        let cfg = &model_arg(model)?.cfg.qformer;
        *out_arg(queries, "queries")? = cfg.num_queries;
        *out_arg(dim, "dim")? = cfg.dim;
        Ok(())
    })
}

/// Q-Former latent of a protein, row-major `queries x dim`.
///
/// # Safety
/// `model` must be a live handle, `sequence` a valid NUL-terminated string,
/// `out` writable for `cap` values and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_embed_protein(
    model: *const BbModel,
    sequence: *const c_char,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> BbStatus {
    guard(|| {
        let z = model_arg(model)?.protein_latent(str_arg(sequence, "sequence")?)?;
        write_f64s(z.values(), out, cap, len)
    })
}

/// Text-encoder embedding (before normalization), `dim` values.
///
/// # Safety
/// As for `bb_model_embed_protein`.
#[no_mangle]
pub unsafe extern "C" fn bb_model_embed_text(
    model: *const BbModel,
    text: *const c_char,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> BbStatus {
    guard(|| {
        let z = model_arg(model)?.text_embedding(str_arg(text, "text")?)?;
        write_f64s(z.values(), out, cap, len)
    })
}

/// Temperature-scaled similarity between a protein and a text.
///
/// # Safety
/// `model` must be a live handle, both strings valid and NUL-terminated,
/// `score` writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_similarity(
    model: *const BbModel,
    sequence: *const c_char,
    text: *const c_char,
    score: *mut f64,
) -> BbStatus {
    guard(|| {
        let m = model_arg(model)?;
        let zp = m.protein_latent(str_arg(sequence, "sequence")?)?;
        let zt = m.text_embedding(str_arg(text, "text")?)?;
        let s = similarity_matrix(&[zp], &[zt], m.qformer.temperature(&m.store))?;
        *out_arg(score, "score")? = s.values()[0];
        Ok(())
    })
}

/// Greedy answer to `question` about a protein, written NUL-terminated.
/// `len` receives the byte count including the NUL.
///
/// # Safety
/// `model` must be a live handle, both strings valid and NUL-terminated,
/// `out` writable for `cap` bytes and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn bb_model_generate(
    model: *const BbModel,
    sequence: *const c_char,
    question: *const c_char,
    max_new: usize,
    out: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> BbStatus {
    guard(|| {
        let m = model_arg(model)?;
        let cond = m.conditioning(str_arg(sequence, "sequence")?, ProteinMode::Aligned)?;
        let answer = generate_answer(m, &cond, str_arg(question, "question")?, max_new)?;
        write_str(&answer, out, cap, len)
    })
}

/// SHA-256 fingerprint of the parameters whose names start with `prefix`
/// (an empty prefix covers all), as NUL-terminated hex.
///
/// # Safety
/// As for `bb_model_generate`.
#[no_mangle]
pub unsafe extern "C" fn bb_model_fingerprint(
    model: *const BbModel,
    prefix: *const c_char,
    out: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> BbStatus {
    guard(|| {
        let fp = model_arg(model)?.fingerprint(str_arg(prefix, "prefix")?);
        write_str(&fp, out, cap, len)
    })
}
