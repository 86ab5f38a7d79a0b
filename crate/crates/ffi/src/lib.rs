//! C ABI over saved telemafuse models and the fusion kernels.
//!
//! Every function returns a [`TfStatus`]; on failure a message is kept per
//! thread and can be read with [`tf_last_error_message`]. Models are opaque
//! [`TfModel`] handles released with [`tf_model_free`]. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use telemafuse::artifact::{predict_catalog_values, ModelArtifact};
use telemafuse::error::{Error, ErrorKind};
use telemafuse::fusion::{choquet_integral, solve_lambda, FusionEnsemble, FuzzyMeasure};

/// Result of every call. Codes 2-4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    ConfigError = 2,
    DataError = 3,
    NumericError = 4,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

impl From<ErrorKind> for TfStatus {
    fn from(k: ErrorKind) -> Self {
        match k {
            ErrorKind::Config => TfStatus::ConfigError,
            ErrorKind::Data => TfStatus::DataError,
            ErrorKind::Numeric => TfStatus::NumericError,
        }
    }
}

/// A loaded model. Opaque to C callers.
pub struct TfModel {
    catalog: Vec<CString>,
    names: Vec<String>,
    ensemble: FusionEnsemble,
}

/// Fused prediction for one row.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TfPrediction {
    /// 0 = male, 1 = female.
    pub label: i32,
    /// `c1 / (c0 + c1)`, the class-1 score in [0, 1].
    pub score: f64,
    pub c0: f64,
    pub c1: f64,
    /// Label predicted by each of the three member forests.
    pub member_labels: [i32; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TfStatus, msg: impl Into<String>) -> TfStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> TfStatus {
    fail(e.kind().into(), e.to_string())
}

fn guard(f: impl FnOnce() -> TfStatus) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TfStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable `f64`s.
unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        return None;
    }
    Some(std::slice::from_raw_parts(ptr, len))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and verifies a model artifact. On success `*out` owns a handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_load(path: *const c_char, out: *mut *mut TfModel) -> TfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(TfStatus::NullPointer, "path and out must be non-null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(TfStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match ModelArtifact::load(Path::new(path)) {
            Ok((artifact, ensemble)) => {
                let catalog = artifact
                    .catalog
                    .iter()
                    .map(|n| CString::new(n.as_str()).expect("feature names hold no NUL"))
                    .collect();
                let model = TfModel {
                    catalog,
                    names: artifact.catalog,
                    ensemble,
                };
                *out = Box::into_raw(Box::new(model));
                TfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a handle from [`tf_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features, the length expected by [`tf_model_predict`].
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_feature_count(model: *const TfModel) -> usize {
    model.as_ref().map_or(0, |m| m.catalog.len())
}

/// Name of input feature `index`, borrowed from the handle.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_feature_name(
    model: *const TfModel,
    index: usize,
    out: *mut *const c_char,
) -> TfStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(TfStatus::NullPointer, "model and out must be non-null");
        };
        match m.catalog.get(index) {
            Some(c) => {
                *out = c.as_ptr();
                TfStatus::Ok
            }
            None => fail(
                TfStatus::InvalidArgument,
                format!("feature index {index} out of range (count {})", m.catalog.len()),
            ),
        }
    })
}

/// Fuses one row given in feature order.
///
/// # Safety
/// `values` must point to `n_values` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_predict(
    model: *const TfModel,
    values: *const f64,
    n_values: usize,
    out: *mut TfPrediction,
) -> TfStatus {
    guard(|| {
        let (Some(m), Some(x), false) = (model.as_ref(), slice(values, n_values), out.is_null()) else {
            return fail(TfStatus::NullPointer, "model, values and out must be non-null");
        };
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return fail(TfStatus::DataError, format!("value {i} is not finite"));
        }
        match predict_catalog_values(&m.ensemble, &m.names, x) {
            Ok(o) => {
                let mut member_labels = [0; 3];
                for (slot, l) in member_labels.iter_mut().zip(&o.predicted) {
                    *slot = l.index() as i32;
                }
                *out = TfPrediction {
                    label: o.label.index() as i32,
                    score: o.score,
                    c0: o.integrals[0],
                    c1: o.integrals[1],
                    member_labels,
                };
                TfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sugeno λ for the given densities, each in (0, 1).
///
/// # Safety
/// `densities` must point to `n` doubles; `out_lambda` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_solve_lambda(densities: *const f64, n: usize, out_lambda: *mut f64) -> TfStatus {
    guard(|| {
        let (Some(g), false) = (slice(densities, n), out_lambda.is_null()) else {
            return fail(TfStatus::NullPointer, "densities and out_lambda must be non-null");
        };
        match solve_lambda(g) {
            Ok(l) => {
                *out_lambda = l;
                TfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Choquet integral of `values` under the λ-measure built from `densities`.
///
/// # Safety
/// Both arrays must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_choquet(
    values: *const f64,
    densities: *const f64,
    n: usize,
    out: *mut f64,
) -> TfStatus {
    guard(|| {
        let (Some(f), Some(g), false) = (slice(values, n), slice(densities, n), out.is_null()) else {
            return fail(TfStatus::NullPointer, "values, densities and out must be non-null");
        };
        let result = FuzzyMeasure::new(g.to_vec()).and_then(|m| choquet_integral(f, &m));
        match result {
            Ok(c) => {
                *out = c;
                TfStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
