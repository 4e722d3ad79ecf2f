//! C ABI over `steal-core`.
//!
//! Every fallible function returns a [`StealStatus`]; on failure the message
//! is kept per thread and can be read with [`steal_last_error_message`].
//! Models are opaque handles owned by the caller and released with
//! [`steal_model_free`]. Buffers are caller-allocated.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use steal_core::dataset::{Clip, ClipSpec};
use steal_core::evaluation::roc_auc;
use steal_core::model::checkpoint::Checkpoint;
use steal_core::model::{Autoencoder, Preset};
use steal_core::scoring::{minmax_normalize, psnr_values, PsnrConfig};
use steal_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StealStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Panic = 6,
}

/// Autoencoder handle.
pub struct StealModel {
    model: Autoencoder<f32>,
    psnr: PsnrConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: StealStatus, msg: impl Into<String>) -> StealStatus {
    set_error(msg);
    status
}

fn from_core(e: Error) -> StealStatus {
    let status = match e.exit_code() {
        1 => StealStatus::Config,
        3 => StealStatus::Numeric,
        _ => match e {
            Error::ShapeMismatch { .. } | Error::EmptyInput(_) | Error::OutOfRange(_) | Error::SingleClass => {
                StealStatus::InvalidArgument
            }
            _ => StealStatus::Data,
        },
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> StealStatus) -> StealStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(StealStatus::Panic, "internal panic"),
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize) -> Result<&'a [T], StealStatus> {
    if p.is_null() {
        return Err(fail(StealStatus::NullPointer, "null input buffer"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], StealStatus> {
    if p.is_null() {
        return Err(fail(StealStatus::NullPointer, "null output buffer"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, StealStatus> {
    if p.is_null() {
        return Err(fail(StealStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(StealStatus::InvalidArgument, "string is not UTF-8"))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn steal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `cap > 0`). Returns the full message length
/// without the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must point to `cap` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn steal_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

fn model_handle(model: Autoencoder<f32>) -> *mut StealModel {
    let psnr = PsnrConfig::for_length(model.arch.input[0]);
    Box::into_raw(Box::new(StealModel { model, psnr }))
}

/// Freshly initialized model of a named preset (`"desk"` or `"paper"`).
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn steal_model_new(preset: *const c_char, seed: u64, out: *mut *mut StealModel) -> StealStatus {
    guard(|| {
        if out.is_null() {
            return fail(StealStatus::NullPointer, "null output handle");
        }
        let name = tri!(c_str(preset));
        let preset: Preset = match name.parse() {
            Ok(p) => p,
            Err(e) => return from_core(e),
        };
        match Autoencoder::<f32>::from_preset(preset, seed) {
            Ok(m) => {
                *out = model_handle(m);
                StealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Loads the model stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn steal_model_load(path: *const c_char, out: *mut *mut StealModel) -> StealStatus {
    guard(|| {
        if out.is_null() {
            return fail(StealStatus::NullPointer, "null output handle");
        }
        let path = tri!(c_str(path));
        match Checkpoint::load(Path::new(path)) {
            Ok(c) => {
                *out = model_handle(c.model);
                StealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steal_model_free(model: *mut StealModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the clip shape `[T, C, H, W]` into `out`.
///
/// # Safety
/// `model` must be a live handle and `out` must hold 4 values.
#[no_mangle]
pub unsafe extern "C" fn steal_model_input_shape(model: *const StealModel, out: *mut usize) -> StealStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(StealStatus::NullPointer, "null model");
        };
        tri!(output(out, 4)).copy_from_slice(&m.model.arch.input);
        StealStatus::Ok
    })
}

/// Number of learnable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn steal_model_param_count(model: *const StealModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.param_count())
}

unsafe fn clip_from_raw(m: &StealModel, data: *const f32, len: usize) -> Result<Clip, StealStatus> {
    let shape = m.model.arch.input;
    let expected: usize = shape.iter().product();
    let data = input(data, len)?;
    if len != expected {
        return Err(fail(
            StealStatus::InvalidArgument,
            format!("clip has {len} values, model expects {expected}"),
        ));
    }
    Clip::from_parts(
        data.to_vec(),
        shape,
        ClipSpec {
            video_id: String::new(),
            start: 1,
            stride: 1,
            length: shape[0],
        },
    )
    .map_err(from_core)
}

/// Reconstructs one `T×C×H×W` clip with values in `[-1, 1]`.
///
/// # Safety
/// `clip` and `out` must each hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn steal_model_reconstruct(
    model: *const StealModel,
    clip: *const f32,
    len: usize,
    out: *mut f32,
) -> StealStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(StealStatus::NullPointer, "null model");
        };
        let c = tri!(clip_from_raw(m, clip, len));
        let dst = tri!(output(out, len));
        match m.model.reconstruct(&c) {
            Ok(r) => {
                dst.copy_from_slice(&r);
                StealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// PSNR (dB) of the clip's scored frame (`T / 2`) against its reconstruction.
///
/// # Safety
/// `clip` must hold `len` floats; `out_psnr` must be writable.
#[no_mangle]
pub unsafe extern "C" fn steal_model_score_clip(
    model: *const StealModel,
    clip: *const f32,
    len: usize,
    out_psnr: *mut f64,
) -> StealStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(StealStatus::NullPointer, "null model");
        };
        if out_psnr.is_null() {
            return fail(StealStatus::NullPointer, "null output");
        }
        let c = tri!(clip_from_raw(m, clip, len));
        let recon = match m.model.reconstruct(&c) {
            Ok(r) => r,
            Err(e) => return from_core(e),
        };
        let t = m.psnr.target_frame_offset;
        let frame = len / m.model.arch.input[0];
        match psnr_values(c.frame(t), &recon[t * frame..(t + 1) * frame], &m.psnr) {
            Ok(v) => {
                *out_psnr = v;
                StealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// PSNR (dB) between two frames of `len` values in `[-1, 1]`.
///
/// # Safety
/// `original` and `reconstruction` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn steal_psnr(
    original: *const f32,
    reconstruction: *const f32,
    len: usize,
    peak: f64,
    eps: f64,
    out: *mut f64,
) -> StealStatus {
    guard(|| {
        let a = tri!(input(original, len));
        let b = tri!(input(reconstruction, len));
        if out.is_null() {
            return fail(StealStatus::NullPointer, "null output");
        }
        let cfg = PsnrConfig {
            peak,
            eps,
            target_frame_offset: 0,
        };
        match psnr_values(a, b, &cfg) {
            Ok(v) => {
                *out = v;
                StealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Min-max normalizes `values` into `out` (constant input maps to 0.5).
///
/// # Safety
/// `values` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn steal_minmax_normalize(values: *const f64, len: usize, out: *mut f64) -> StealStatus {
    guard(|| {
        let v = tri!(input(values, len));
        let dst = tri!(output(out, len));
        match minmax_normalize(v) {
            Ok(n) => {
                dst.copy_from_slice(&n);
                StealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Frame-level ROC AUC; labels are 0 (normal) or nonzero (anomalous).
///
/// # Safety
/// `scores` and `labels` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn steal_roc_auc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> StealStatus {
    guard(|| {
        let s = tri!(input(scores, len));
        let l = tri!(input(labels, len));
        if out.is_null() {
            return fail(StealStatus::NullPointer, "null output");
        }
        match roc_auc(s, l) {
            Ok(r) => {
                *out = r.auc;
                StealStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}
