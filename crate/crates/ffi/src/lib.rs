//! C ABI over `modalfuse`.
//!
//! Every function returns an [`MmfStatus`]; on failure the message is
//! available from [`mmf_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use modalfuse::corpus::{load_manifest, stratified_kfold, DatasetManifest, Task};
use modalfuse::encoders::{IMAGE_EMBED_DIM, TEXT_EMBED_DIM};
use modalfuse::eval::evaluate;
use modalfuse::fusion::ModelConfigId;
use modalfuse::training::{compute_class_weights, EmbeddedDataset, TrainError, TrainedModel};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Divergence = 5,
    Panic = 6,
}

/// Aggregate metrics of one evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MmfMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Loaded checkpoint (single model or ensemble).
pub struct MmfModel {
    inner: TrainedModel,
}

/// Loaded dataset manifest.
pub struct MmfManifest {
    inner: DatasetManifest,
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

fn fail(status: MmfStatus, msg: impl Into<String>) -> MmfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MmfStatus) -> MmfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MmfStatus::Panic, "internal panic"),
    }
}

fn train_status(e: &TrainError) -> MmfStatus {
    match e {
        TrainError::Divergence { .. } => MmfStatus::Divergence,
        _ => MmfStatus::Data,
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, MmfStatus> {
    if p.is_null() {
        return Err(fail(MmfStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(MmfStatus::InvalidArgument, "path is not UTF-8"))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mmf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Tempered inverse-frequency class weights `(max_count / count_c)^beta`.
///
/// # Safety
/// `counts` and `out_weights` must each point to `k` elements.
#[no_mangle]
pub unsafe extern "C" fn mmf_class_weights(
    counts: *const usize,
    k: usize,
    beta: f64,
    out_weights: *mut f64,
) -> MmfStatus {
    guard(|| {
        if counts.is_null() || out_weights.is_null() {
            return fail(MmfStatus::NullPointer, "null argument");
        }
        let counts = std::slice::from_raw_parts(counts, k);
        match compute_class_weights(counts, beta) {
            Ok(w) => {
                std::slice::from_raw_parts_mut(out_weights, k).copy_from_slice(&w.weights);
                MmfStatus::Ok
            }
            Err(e) => fail(MmfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Accuracy and macro precision/recall/F1 of `n` predictions over `k` classes.
///
/// # Safety
/// `preds` and `labels` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_evaluate(
    preds: *const usize,
    labels: *const usize,
    n: usize,
    k: usize,
    out: *mut MmfMetrics,
) -> MmfStatus {
    guard(|| {
        if preds.is_null() || labels.is_null() || out.is_null() {
            return fail(MmfStatus::NullPointer, "null argument");
        }
        let preds = std::slice::from_raw_parts(preds, n);
        let labels = std::slice::from_raw_parts(labels, n);
        match evaluate(preds, labels, k) {
            Ok(r) => {
                *out = MmfMetrics {
                    accuracy: r.accuracy,
                    macro_precision: r.macro_precision,
                    macro_recall: r.macro_recall,
                    macro_f1: r.macro_f1,
                };
                MmfStatus::Ok
            }
            Err(e) => fail(MmfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Loads a JSONL manifest for task `'A'` or `'B'`. Relative image paths
/// resolve against the manifest's directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_manifest_load(path: *const c_char, task: c_char, out: *mut *mut MmfManifest) -> MmfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MmfStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let task: Task = match (task as u8 as char).to_string().parse() {
            Ok(t) => t,
            Err(e) => return fail(MmfStatus::InvalidArgument, e),
        };
        match load_manifest(&path, task) {
            Ok(mut m) => {
                if let Some(dir) = path.parent() {
                    m.resolve_paths(dir);
                }
                *out = Box::into_raw(Box::new(MmfManifest { inner: m }));
                MmfStatus::Ok
            }
            Err(e @ modalfuse::corpus::CorpusError::Io { .. }) => fail(MmfStatus::Io, e.to_string()),
            Err(e) => fail(MmfStatus::Data, e.to_string()),
        }
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `manifest` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_manifest_len(manifest: *const MmfManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.inner.len())
}

/// Stratified k-fold assignment; writes the fold of sample `i` to
/// `out_folds[i]`.
///
/// # Safety
/// `manifest` must be a live handle; `out_folds` must hold
/// `mmf_manifest_len(manifest)` elements.
#[no_mangle]
pub unsafe extern "C" fn mmf_manifest_kfold(
    manifest: *const MmfManifest,
    k: usize,
    seed: u64,
    out_folds: *mut usize,
) -> MmfStatus {
    guard(|| {
        let Some(m) = manifest.as_ref() else {
            return fail(MmfStatus::NullPointer, "manifest is null");
        };
        if out_folds.is_null() {
            return fail(MmfStatus::NullPointer, "out_folds is null");
        }
        match stratified_kfold(&m.inner, k, seed) {
            Ok(folds) => {
                let out = std::slice::from_raw_parts_mut(out_folds, m.inner.len());
                for (slot, s) in out.iter_mut().zip(&m.inner.samples) {
                    *slot = folds.fold_of(&s.id).unwrap_or(usize::MAX);
                }
                MmfStatus::Ok
            }
            Err(e) => fail(MmfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `manifest` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmf_manifest_free(manifest: *mut MmfManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Loads a checkpoint file or an ensemble checkpoint directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_load(path: *const c_char, out: *mut *mut MmfModel) -> MmfStatus {
    guard(|| {
        if out.is_null() {
            return fail(MmfStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        if !path.exists() {
            return fail(MmfStatus::Io, format!("{} does not exist", path.display()));
        }
        match TrainedModel::load(&path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(MmfModel { inner: m }));
                MmfStatus::Ok
            }
            Err(e) => fail(MmfStatus::Data, e.to_string()),
        }
    })
}

/// Configuration number 1..=8 (M1..M8), or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_config(model: *const MmfModel) -> u32 {
    model.as_ref().map_or(0, |m| {
        let c = m.inner.config();
        ModelConfigId::ALL.iter().position(|&x| x == c).map_or(0, |i| i as u32 + 1)
    })
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_num_classes(model: *const MmfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Class probabilities for one sample. `image` holds 512 values and `text`
/// 1024; either may be null when the configuration does not use it.
/// `out_gate` (two values: image, text) may be null; for models without a
/// gate it is left untouched.
///
/// # Safety
/// Non-null pointers must reference the sizes above; `out_probs` must hold
/// `mmf_model_num_classes(model)` values.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_predict_proba(
    model: *const MmfModel,
    image: *const f32,
    text: *const f32,
    out_probs: *mut f64,
    out_gate: *mut f64,
) -> MmfStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(MmfStatus::NullPointer, "model is null");
        };
        if out_probs.is_null() {
            return fail(MmfStatus::NullPointer, "out_probs is null");
        }
        let widen = |p: *const f32, n: usize| -> Option<Vec<f64>> {
            (!p.is_null()).then(|| std::slice::from_raw_parts(p, n).iter().map(|&v| f64::from(v)).collect())
        };
        let image = widen(image, IMAGE_EMBED_DIM);
        let text = widen(text, TEXT_EMBED_DIM);
        let k = m.inner.num_classes();
        let data = EmbeddedDataset::single(image.as_deref(), text.as_deref(), k);
        match m.inner.predict(&data) {
            Ok(preds) => {
                let p = &preds[0];
                std::slice::from_raw_parts_mut(out_probs, k).copy_from_slice(&p.probabilities);
                if let (Some(g), false) = (p.gate, out_gate.is_null()) {
                    *out_gate = g.g_img;
                    *out_gate.add(1) = g.g_txt;
                }
                MmfStatus::Ok
            }
            Err(e) => fail(
                if matches!(e, TrainError::Data(_)) {
                    MmfStatus::InvalidArgument
                } else {
                    train_status(&e)
                },
                e.to_string(),
            ),
        }
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmf_model_free(model: *mut MmfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = mmf_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn class_weights_through_the_abi() {
        let counts = [207usize, 100];
        let mut w = [0.0; 2];
        let s = unsafe { mmf_class_weights(counts.as_ptr(), 2, 0.3, w.as_mut_ptr()) };
        assert_eq!(s, MmfStatus::Ok);
        assert!(mmf_last_error_message().is_null());
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 1.2439).abs() < 1e-3);

        let zero = [5usize, 0];
        let s = unsafe { mmf_class_weights(zero.as_ptr(), 2, 0.3, w.as_mut_ptr()) };
        assert_eq!(s, MmfStatus::InvalidArgument);
        assert!(!last_error().is_empty());
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut out = MmfMetrics::default();
        let s = unsafe { mmf_evaluate(ptr::null(), ptr::null(), 0, 2, &mut out) };
        assert_eq!(s, MmfStatus::NullPointer);
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { mmf_model_load(ptr::null(), &mut h) }, MmfStatus::NullPointer);
        assert_eq!(unsafe { mmf_manifest_len(ptr::null()) }, 0);
        unsafe { mmf_model_free(ptr::null_mut()) };
    }

    #[test]
    fn evaluate_matches_hand_count() {
        let preds = [1usize, 1, 0, 1];
        let labels = [1usize, 0, 0, 1];
        let mut m = MmfMetrics::default();
        assert_eq!(unsafe { mmf_evaluate(preds.as_ptr(), labels.as_ptr(), 4, 2, &mut m) }, MmfStatus::Ok);
        assert_eq!(m.accuracy, 0.75);
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }
}
