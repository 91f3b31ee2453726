//! C interface to the saliency model.
//!
//! Every function returns a [`SumStatus`]. On failure a description is kept
//! per thread and can be read with [`sum_last_error`]. Panics never cross the
//! boundary; they surface as [`SumStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sum_core::blocks::DomainLabel;
use sum_core::data::{load_checkpoint, resize_bilinear};
use sum_core::metrics::evaluate_sample;
use sum_core::model::SumModel;
use sum_core::tensor::Tensor;
use sum_core::SumError;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SumStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Shape = 6,
    Label = 7,
    Numeric = 8,
    UndefinedMetric = 9,
    Panic = 10,
    Internal = 11,
}

/// Opaque model handle.
pub struct SumModelHandle {
    model: SumModel,
}

/// Metric values for one prediction. A metric that is undefined for the
/// inputs is NaN and its bit in `undefined_mask` is set
/// (cc=1, kld=2, auc=4, sim=8, nss=16).
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SumMetrics {
    pub cc: f64,
    pub kld: f64,
    pub auc: f64,
    pub sim: f64,
    pub nss: f64,
    pub undefined_mask: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &SumError) -> SumStatus {
    match e {
        SumError::Io { .. } => SumStatus::Io,
        SumError::Parse { .. } | SumError::Manifest { .. } => SumStatus::Parse,
        SumError::Checkpoint(_) => SumStatus::Checkpoint,
        SumError::InvalidShape(_) | SumError::InvalidAxis { .. } => SumStatus::Shape,
        SumError::Label { .. } => SumStatus::Label,
        SumError::NonFinite { .. } | SumError::Domain { .. } | SumError::NanLoss { .. } => SumStatus::Numeric,
        SumError::UndefinedMetric { .. } | SumError::Normalization(_) => SumStatus::UndefinedMetric,
        SumError::Config(_) => SumStatus::InvalidArgument,
        _ => SumStatus::Internal,
    }
}

fn fail(status: SumStatus, msg: impl Into<String>) -> SumStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), (SumStatus, String)>) -> SumStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SumStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SumStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn core_err(e: SumError) -> (SumStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SumStatus, String) {
    (SumStatus::NullPointer, format!("{what} is NULL"))
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. The pointer stays valid until the next call on the
/// same thread.
#[no_mangle]
pub extern "C" fn sum_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sum_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `sum train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
/// On success `*out` owns a handle that must be released with
/// [`sum_model_free`].
#[no_mangle]
pub unsafe extern "C" fn sum_model_load(path: *const c_char, out: *mut *mut SumModelHandle) -> SumStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (SumStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let model = load_checkpoint(&PathBuf::from(path)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(SumModelHandle { model }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`sum_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sum_model_free(model: *mut SumModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length S the model runs at.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sum_model_input_size(model: *const SumModelHandle, out: *mut usize) -> SumStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.model.config.input_size;
        Ok(())
    })
}

/// Number of learnable scalars.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sum_model_num_parameters(model: *const SumModelHandle, out: *mut usize) -> SumStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.model.num_parameters();
        Ok(())
    })
}

/// Predicts a saliency map for an RGB image.
///
/// `image` holds `height * width * 3` values in [0, 1], row-major with
/// interleaved channels. `domain` is the label code (0 natural-mouse,
/// 1 natural-eye, 2 e-commerce, 3 UI). Images of another size are resized
/// to the model input and the prediction is resized back, so `out_map`
/// receives `height * width` values in (0, 1).
///
/// # Safety
/// `image` must point to `height * width * 3` readable doubles and `out_map`
/// to `height * width` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sum_model_predict(
    model: *const SumModelHandle,
    image: *const f64,
    height: usize,
    width: usize,
    domain: u32,
    out_map: *mut f64,
) -> SumStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if image.is_null() {
            return Err(null("image"));
        }
        if out_map.is_null() {
            return Err(null("out_map"));
        }
        if height == 0 || width == 0 {
            return Err((SumStatus::Shape, format!("empty image {height}x{width}")));
        }
        let n = height
            .checked_mul(width)
            .filter(|n| n.checked_mul(3).is_some())
            .ok_or_else(|| (SumStatus::Shape, "image too large".to_string()))?;
        let label = DomainLabel::from_code(domain as usize).map_err(core_err)?;
        let pixels = std::slice::from_raw_parts(image, n * 3).to_vec();
        let img = Tensor::new(&[height, width, 3], pixels).map_err(core_err)?;
        let s = m.config.input_size;
        let native = (height, width) == (s, s);
        let input = if native { img } else { resize_bilinear(&img, s, s).map_err(core_err)? };
        let mut pred = m.predict(&input, label).map_err(core_err)?;
        if !native {
            pred = resize_bilinear(&pred, height, width).map_err(core_err)?;
        }
        std::slice::from_raw_parts_mut(out_map, n).copy_from_slice(pred.data());
        Ok(())
    })
}

/// Scores a prediction against a ground-truth map and a fixation map
/// (nonzero = fixated), all of length `len`. Undefined metrics are flagged
/// in `undefined_mask` rather than reported as an error.
///
/// # Safety
/// The three arrays must hold `len` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn sum_metrics(
    pred: *const f64,
    gt_map: *const f64,
    fixations: *const f64,
    len: usize,
    out: *mut SumMetrics,
) -> SumStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if pred.is_null() || gt_map.is_null() || fixations.is_null() {
            return Err(null("input array"));
        }
        if len == 0 {
            return Err((SumStatus::Shape, "empty maps".to_string()));
        }
        let p = std::slice::from_raw_parts(pred, len);
        let g = std::slice::from_raw_parts(gt_map, len);
        let f: Vec<f64> = std::slice::from_raw_parts(fixations, len)
            .iter()
            .map(|&v| if v != 0.0 { 1.0 } else { 0.0 })
            .collect();
        let r = evaluate_sample("ffi", p, g, &f).map_err(core_err)?;
        let mut m = SumMetrics::default();
        let slots = [&mut m.cc, &mut m.kld, &mut m.auc, &mut m.sim, &mut m.nss];
        let mut mask = 0;
        for (k, (slot, v)) in slots.into_iter().zip(r.values()).enumerate() {
            match v {
                Some(v) => *slot = v,
                None => {
                    *slot = f64::NAN;
                    mask |= 1 << k;
                }
            }
        }
        m.undefined_mask = mask;
        *out = m;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&SumError::Checkpoint("x".into())), SumStatus::Checkpoint);
        assert_eq!(status_of(&SumError::Label { code: 9, classes: 4 }), SumStatus::Label);
        assert_eq!(status_of(&SumError::NanLoss { epoch: 1, batch: 0 }), SumStatus::Numeric);
    }

    #[test]
    fn panics_are_contained() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, SumStatus::Panic);
        let msg = unsafe { CStr::from_ptr(sum_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), SumStatus::Ok);
        assert!(sum_last_error().is_null());
    }
}
