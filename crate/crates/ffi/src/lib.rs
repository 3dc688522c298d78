//! C ABI over `magnet-core`.
//!
//! Every function returns a [`MagnetStatus`]. On failure the message is kept
//! per thread and read with [`magnet_last_error`]. Strings handed out by this
//! library are freed with [`magnet_string_free`]; pools with
//! [`magnet_pool_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use magnet_core::contamination::{fsp_tokens, report};
use magnet_core::fc_language::{parse_fc_list, serialize_fc_list, validate_args};
use magnet_core::fsp_sampler::parse_fsps;
use magnet_core::function_pool::{load_pool, parse_pool, FunctionPool};
use magnet_core::postprocess_mixture::{irrelevance_ratio, MixtureConfig};
use magnet_core::training_losses::{check_toy, LossConfig, MdpoForm, ToyInstance};
use magnet_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MagnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Precondition = 6,
    Config = 7,
    Backend = 8,
    Panic = 9,
}

/// Opaque handle to a loaded function pool.
pub struct MagnetPool {
    inner: FunctionPool,
}

pub const MAGNET_FORM_LOG_RATIO: c_int = 0;
pub const MAGNET_FORM_AS_PRINTED: c_int = 1;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> MagnetStatus {
    match e {
        Error::Io { .. } => MagnetStatus::Io,
        Error::Json { .. } | Error::FcParse(_) => MagnetStatus::Parse,
        Error::Validation { .. } => MagnetStatus::Validation,
        Error::Precondition(_) => MagnetStatus::Precondition,
        Error::Config(_) | Error::Template(_) => MagnetStatus::Config,
        Error::Transport { .. } | Error::Protocol(_) | Error::Judgment(_) => MagnetStatus::Backend,
    }
}

struct Failure(MagnetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MagnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MagnetStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside magnet");
            MagnetStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MagnetStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MagnetStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure(MagnetStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(())
}

fn into_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NULs replaced").into_raw()
}

/// Message of the last failure on this thread, or null after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn magnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn magnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` is null or came from this library and was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn magnet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a pool from a JSON or JSON-lines file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn magnet_pool_load(path: *const c_char, out: *mut *mut MagnetPool) -> MagnetStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = load_pool(path)?;
        *out = Box::into_raw(Box::new(MagnetPool { inner }));
        Ok(())
    })
}

/// Parse a pool from JSON text.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn magnet_pool_parse(json: *const c_char, out: *mut *mut MagnetPool) -> MagnetStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = str_arg(json, "json")?;
        let inner = parse_pool(text, "pool")?;
        *out = Box::into_raw(Box::new(MagnetPool { inner }));
        Ok(())
    })
}

/// # Safety
/// `pool` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn magnet_pool_len(pool: *const MagnetPool) -> usize {
    pool.as_ref().map_or(0, |p| p.inner.len())
}

/// # Safety
/// `pool` is null or a handle that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn magnet_pool_free(pool: *mut MagnetPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Parse a call list and write its canonical form and call count.
///
/// # Safety
/// `text` is a NUL-terminated string; `out` and `count` are writable.
#[no_mangle]
pub unsafe extern "C" fn magnet_fc_normalize(
    text: *const c_char,
    out: *mut *mut c_char,
    count: *mut usize,
) -> MagnetStatus {
    guard(|| {
        out_arg(out, "out")?;
        out_arg(count, "count")?;
        let list = parse_fc_list(str_arg(text, "text")?).map_err(Error::from)?;
        *count = list.len();
        *out = into_c(serialize_fc_list(&list));
        Ok(())
    })
}

/// Validate every call of a list against the pool. Writes a JSON array of
/// reports, one per call.
///
/// # Safety
/// `pool` is a live handle, `text` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn magnet_fc_validate(
    pool: *const MagnetPool,
    text: *const c_char,
    out: *mut *mut c_char,
) -> MagnetStatus {
    guard(|| {
        out_arg(out, "out")?;
        let pool = pool
            .as_ref()
            .ok_or_else(|| Failure(MagnetStatus::NullPointer, "`pool` is null".into()))?;
        let list = parse_fc_list(str_arg(text, "text")?).map_err(Error::from)?;
        let mut reports = Vec::with_capacity(list.len());
        for call in &list.calls {
            let sig = pool.inner.require(&call.name)?;
            reports.push(validate_args(call, sig)?);
        }
        *out = into_c(serde_json::to_string(&reports).expect("reports serialize"));
        Ok(())
    })
}

/// Exact-match and n-gram overlap percentages of two FSP JSON-lines corpora.
///
/// # Safety
/// `train` and `test` are NUL-terminated strings; `exact_pct` and
/// `ngram_pct` are writable.
#[no_mangle]
pub unsafe extern "C" fn magnet_contamination(
    train: *const c_char,
    test: *const c_char,
    n: usize,
    exact_pct: *mut f64,
    ngram_pct: *mut f64,
) -> MagnetStatus {
    guard(|| {
        out_arg(exact_pct, "exact_pct")?;
        out_arg(ngram_pct, "ngram_pct")?;
        let load = |text: &str, ctx: &str| -> Result<Vec<Vec<String>>, Error> {
            Ok(parse_fsps(text, ctx)?.iter().map(fsp_tokens).collect())
        };
        let train = load(str_arg(train, "train")?, "train")?;
        let test = load(str_arg(test, "test")?, "test")?;
        let r = report(&train, &test, n)?;
        *exact_pct = r.exact_match_pct;
        *ngram_pct = r.ngram_pct;
        Ok(())
    })
}

/// Irrelevance share of a mixture, in percent.
///
/// # Safety
/// `pct` is writable.
#[no_mangle]
pub unsafe extern "C" fn magnet_irrelevance_ratio(
    single_turn: usize,
    multi_turn: usize,
    irrelevance: usize,
    pct: *mut f64,
) -> MagnetStatus {
    guard(|| {
        out_arg(pct, "pct")?;
        let cfg = MixtureConfig {
            n_single_turn: single_turn,
            n_multi_turn: multi_turn,
            n_irrelevance: irrelevance,
            seed: 0,
        };
        *pct = 100.0 * irrelevance_ratio(&cfg)?;
        Ok(())
    })
}

/// Evaluate a toy loss instance. Writes the per-pair reports as JSON and the
/// largest finite-difference relative error.
///
/// # Safety
/// `toy_json` is a NUL-terminated string; `out` and `max_fd_error` are writable.
#[no_mangle]
pub unsafe extern "C" fn magnet_loss_check(
    toy_json: *const c_char,
    lambda: f64,
    eta: f64,
    form: c_int,
    step: f64,
    out: *mut *mut c_char,
    max_fd_error: *mut f64,
) -> MagnetStatus {
    guard(|| {
        out_arg(out, "out")?;
        out_arg(max_fd_error, "max_fd_error")?;
        let form = match form {
            MAGNET_FORM_LOG_RATIO => MdpoForm::LogRatio,
            MAGNET_FORM_AS_PRINTED => MdpoForm::AsPrinted,
            other => return Err(Failure(MagnetStatus::Config, format!("unknown loss form {other}"))),
        };
        let toy: ToyInstance =
            serde_json::from_str(str_arg(toy_json, "toy_json")?).map_err(|e| Error::json("toy instance", e))?;
        let reports = check_toy(&toy, &LossConfig { lambda, eta, form }, step)?;
        *max_fd_error = reports.iter().map(|r| r.fd_relative_error).fold(0.0, f64::max);
        *out = into_c(serde_json::to_string(&reports).expect("reports serialize"));
        Ok(())
    })
}
