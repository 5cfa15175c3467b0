//! C ABI over the efllm core.
//!
//! Every fallible call returns an [`EfllmStatus`]; on failure the message is
//! available from [`efllm_last_error`] on the same thread. Strings handed out
//! by the library are released with [`efllm_string_free`], models with
//! [`efllm_model_free`].

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use efllm::diagnostics::{anova, similarity};
use efllm::forecast::{BinningScheme, Forecaster};
use efllm::model::{Checkpoint, Decode};
use efllm::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfllmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    OutOfRange = 4,
    Io = 5,
    Checkpoint = 6,
    Numeric = 7,
    Statistics = 8,
    Internal = 9,
}

/// Loaded checkpoint. Opaque to C.
pub struct EfllmModel {
    ck: Checkpoint,
}

/// One-way ANOVA summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EfllmAnova {
    pub sst: f64,
    pub ssb: f64,
    pub ssw: f64,
    pub f: f64,
    pub p: f64,
    pub groups: usize,
    pub observations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EfllmStatus {
    match e {
        Error::Range { .. } | Error::Index { .. } | Error::Length { .. } | Error::Rank { .. } => EfllmStatus::OutOfRange,
        Error::Io { .. } | Error::Csv(_) => EfllmStatus::Io,
        Error::Checkpoint(_) | Error::Schema(_) => EfllmStatus::Checkpoint,
        Error::NonFinite(_) | Error::Divergence { .. } => EfllmStatus::Numeric,
        Error::ZeroWithinVariance | Error::HallucinationStorm(_) | Error::UnstableModel { .. } => EfllmStatus::Statistics,
        _ => EfllmStatus::InvalidArgument,
    }
}

struct Fail(EfllmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EfllmStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for [`efllm_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EfllmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EfllmStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            EfllmStatus::Internal
        }
    }
}

/// # Safety
/// `p` is null or a nul-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(EfllmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn out_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(EfllmStatus::Internal, "output contains a nul byte".into()))
}

fn scheme(e_r: f64, intervals: usize) -> Result<BinningScheme, Fail> {
    Ok(BinningScheme::new(e_r, intervals)?)
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn efllm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn efllm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efllm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads the checkpoint directory at `path` into `*out`.
///
/// # Safety
/// `path` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn efllm_model_load(path: *const c_char, out: *mut *mut EfllmModel) -> EfllmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { str_arg(path, "path") }?;
        let ck = Checkpoint::load(Path::new(path))?;
        unsafe { *out = Box::into_raw(Box::new(EfllmModel { ck })) };
        Ok(())
    })
}

/// # Safety
/// `model` is null or came from [`efllm_model_load`] and was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efllm_model_free(model: *mut EfllmModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Text-only generation. `temperature <= 0` decodes greedily; otherwise
/// sampling is seeded by `seed`. Free `*out` with [`efllm_string_free`].
///
/// # Safety
/// `model` is a live handle, `prompt` a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn efllm_model_generate(
    model: *const EfllmModel,
    prompt: *const c_char,
    max_new: usize,
    temperature: f32,
    seed: u64,
    out: *mut *mut c_char,
) -> EfllmStatus {
    guard(|| {
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let prompt = unsafe { str_arg(prompt, "prompt") }?;
        if !temperature.is_finite() {
            return Err(Fail(EfllmStatus::InvalidArgument, "temperature is not finite".into()));
        }
        let mut f = Forecaster::new(&m.ck.model, &m.ck.vocab);
        f.max_new = max_new;
        let decode = if temperature > 0.0 {
            Decode::Sample { temperature }
        } else {
            Decode::Greedy
        };
        let text = f.generate_text(None, prompt, decode, seed)?;
        unsafe { *out = out_string(text)? };
        Ok(())
    })
}

/// Cosine similarity of mean token embeddings under the model's table.
/// `*hallucination` is set when the score falls below `threshold`.
///
/// # Safety
/// `model` is a live handle, both texts nul-terminated, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn efllm_model_similarity(
    model: *const EfllmModel,
    expected: *const c_char,
    output: *const c_char,
    threshold: f64,
    score: *mut f64,
    hallucination: *mut bool,
) -> EfllmStatus {
    guard(|| {
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if score.is_null() || hallucination.is_null() {
            return Err(null("output pointer"));
        }
        let expected = unsafe { str_arg(expected, "expected") }?;
        let output = unsafe { str_arg(output, "output") }?;
        let r = similarity(expected, output, &m.ck.model.base.embed, &m.ck.vocab, threshold)?;
        unsafe {
            *score = r.score;
            *hallucination = r.is_hallucination;
        }
        Ok(())
    })
}

/// Class of power `p` under `intervals` equal bins of `[0, e_r]`.
///
/// # Safety
/// `class_out` is writable.
#[no_mangle]
pub unsafe extern "C" fn efllm_bin_power(e_r: f64, intervals: usize, p: f64, class_out: *mut usize) -> EfllmStatus {
    guard(|| {
        if class_out.is_null() {
            return Err(null("class_out"));
        }
        let c = scheme(e_r, intervals)?.bin_power(p)?;
        unsafe { *class_out = c };
        Ok(())
    })
}

/// Representative power of `class`: 0 for class 0, else the bin midpoint.
///
/// # Safety
/// `value_out` is writable.
#[no_mangle]
pub unsafe extern "C" fn efllm_decode_class(e_r: f64, intervals: usize, class: usize, value_out: *mut f64) -> EfllmStatus {
    guard(|| {
        if value_out.is_null() {
            return Err(null("value_out"));
        }
        let v = scheme(e_r, intervals)?.decode_class(class)?;
        unsafe { *value_out = v };
        Ok(())
    })
}

/// One-way ANOVA over `n_groups` groups stored back to back in `values`;
/// group `i` holds `group_sizes[i]` observations.
///
/// # Safety
/// `values` holds `sum(group_sizes)` doubles, `group_sizes` holds `n_groups`
/// entries, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn efllm_anova(
    values: *const f64,
    group_sizes: *const usize,
    n_groups: usize,
    out: *mut EfllmAnova,
) -> EfllmStatus {
    guard(|| {
        if values.is_null() || group_sizes.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let sizes = unsafe { std::slice::from_raw_parts(group_sizes, n_groups) };
        let total = sizes
            .iter()
            .try_fold(0usize, |a, &s| a.checked_add(s))
            .ok_or_else(|| Fail(EfllmStatus::OutOfRange, "group sizes overflow".into()))?;
        let values = unsafe { std::slice::from_raw_parts(values, total) };
        let mut groups = Vec::with_capacity(n_groups);
        let mut at = 0;
        for &s in sizes {
            groups.push(values[at..at + s].to_vec());
            at += s;
        }
        let r = anova(&groups)?;
        unsafe {
            *out = EfllmAnova {
                sst: r.sst,
                ssb: r.ssb,
                ssw: r.ssw,
                f: r.f,
                p: r.p,
                groups: r.k,
                observations: r.n,
            }
        };
        Ok(())
    })
}
