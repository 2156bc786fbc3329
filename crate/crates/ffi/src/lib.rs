//! C ABI over the selcal library.
//!
//! Every fallible function returns a [`SelcalStatus`]; on failure the message
//! is available from [`selcal_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. No function
//! unwinds across the boundary: panics are caught and reported as
//! `SELCAL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use selcal::{metrics, selector, CalibrationDataset, Error, TrainedModel};

/// Opaque dataset handle.
pub struct SelcalDataset(CalibrationDataset);

/// Opaque model handle.
pub struct SelcalModel(TrainedModel);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelcalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Corruption = 5,
    Validation = 6,
    Config = 7,
    Shape = 8,
    Domain = 9,
    Numeric = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Scalar part of a selective evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SelcalEvalSummary {
    pub beta_target: f64,
    pub coverage_achieved: f64,
    pub tau: f64,
    pub ece1: f64,
    pub ece2: f64,
    pub brier: f64,
    pub selective_accuracy: f64,
    pub n_accepted: u64,
    pub n_total: u64,
    pub bins_used: u64,
    /// Set when ties at the threshold pushed coverage above the target.
    pub degenerate_threshold: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SelcalCoverageBound {
    pub beta_tilde: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub n_u: u64,
    pub lower: f64,
    pub upper: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SelcalStatus {
    match e {
        Error::Io { .. } => SelcalStatus::Io,
        Error::Format(_) | Error::Json(_) | Error::Csv(_) => SelcalStatus::Format,
        Error::Corruption(_) => SelcalStatus::Corruption,
        Error::Validation(_) => SelcalStatus::Validation,
        Error::Config(_) => SelcalStatus::Config,
        Error::Shape(_) => SelcalStatus::Shape,
        Error::Domain(_) => SelcalStatus::Domain,
        Error::Numeric(_) => SelcalStatus::Numeric,
    }
}

struct Failure(SelcalStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SelcalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SelcalStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            SelcalStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SelcalStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SelcalStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn selcal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next selcal call on the same thread.
#[no_mangle]
pub extern "C" fn selcal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a `.selc` dataset. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn selcal_dataset_load(path: *const c_char, out: *mut *mut SelcalDataset) -> SelcalStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d = selcal::dataset::load_dataset(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SelcalDataset(d)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from `selcal_dataset_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn selcal_dataset_free(ds: *mut SelcalDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; the out pointers may be NULL to skip a value.
#[no_mangle]
pub unsafe extern "C" fn selcal_dataset_dims(
    ds: *const SelcalDataset,
    n: *mut usize,
    embed_dim: *mut usize,
    num_classes: *mut usize,
) -> SelcalStatus {
    guard(|| {
        let d = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        for (p, v) in [(n, d.n()), (embed_dim, d.embed_dim()), (num_classes, d.num_classes())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Loads a JSON model file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn selcal_model_load(path: *const c_char, out: *mut *mut SelcalModel) -> SelcalStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = selcal::model_file::load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SelcalModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from `selcal_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn selcal_model_free(model: *mut SelcalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the soft selector score of every row into `out[0..n)`.
/// `capacity` must be at least the dataset's row count.
///
/// # Safety
/// Handles must be live and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn selcal_model_scores(
    model: *const SelcalModel,
    ds: *const SelcalDataset,
    out: *mut f64,
    capacity: usize,
) -> SelcalStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let d = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        if capacity < d.n() {
            return Err(Failure(
                SelcalStatus::BufferTooSmall,
                format!("buffer holds {capacity} scores, dataset has {} rows", d.n()),
            ));
        }
        if d.n() > 0 && out.is_null() {
            return Err(null("out"));
        }
        let scores = m.scores(d)?;
        ptr::copy_nonoverlapping(scores.as_ptr(), out, scores.len());
        Ok(())
    })
}

/// Selective evaluation at coverage `beta` with `bins` equal-mass bins; the
/// threshold is chosen on the dataset's own scores.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn selcal_selective_eval(
    model: *const SelcalModel,
    ds: *const SelcalDataset,
    beta: f64,
    bins: usize,
    out: *mut SelcalEvalSummary,
) -> SelcalStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let d = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        let out = out_arg(out, "out")?;
        let r = metrics::selective_eval(m, d, beta, bins)?;
        *out = SelcalEvalSummary {
            beta_target: r.beta_target,
            coverage_achieved: r.coverage_achieved,
            tau: r.tau,
            ece1: r.ece1,
            ece2: r.ece2,
            brier: r.brier,
            selective_accuracy: r.selective_accuracy,
            n_accepted: r.n_accepted as u64,
            n_total: r.n_total as u64,
            bins_used: r.bins_used as u64,
            degenerate_threshold: r.warnings.contains(&metrics::EvalWarning::DegenerateThreshold),
        };
        Ok(())
    })
}

/// ECE_q over `m` equal-mass bins. `correct[i]` is nonzero for a correct
/// prediction.
///
/// # Safety
/// `conf` and `correct` must each hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn selcal_ece(
    conf: *const f64,
    correct: *const u8,
    n: usize,
    q: u32,
    m: usize,
    out: *mut f64,
) -> SelcalStatus {
    guard(|| {
        let conf = slice_arg(conf, n, "conf")?;
        let correct: Vec<bool> = slice_arg(correct, n, "correct")?.iter().map(|&c| c != 0).collect();
        *out_arg(out, "out")? = metrics::ece(conf, &correct, q, m)?;
        Ok(())
    })
}

/// Threshold accepting at least a `beta` fraction of `scores`; ties at the
/// threshold are accepted.
///
/// # Safety
/// `scores` must hold `n` doubles; `out_tau` must be valid.
#[no_mangle]
pub unsafe extern "C" fn selcal_choose_threshold(
    scores: *const f64,
    n: usize,
    beta: f64,
    out_tau: *mut f64,
) -> SelcalStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        *out_arg(out_tau, "out_tau")? = selector::choose_threshold(scores, beta)?;
        Ok(())
    })
}

/// Hoeffding interval of radius sqrt(ln(2/δ)/(2·n_u)) around `beta_tilde`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn selcal_coverage_bound(
    beta_tilde: f64,
    n_u: u64,
    delta: f64,
    out: *mut SelcalCoverageBound,
) -> SelcalStatus {
    guard(|| {
        let b = selector::coverage_bound(beta_tilde, n_u as usize, delta)?;
        *out_arg(out, "out")? = SelcalCoverageBound {
            beta_tilde: b.beta_tilde,
            epsilon: b.epsilon,
            delta: b.delta,
            n_u: b.n_u as u64,
            lower: b.lower(),
            upper: b.upper(),
        };
        Ok(())
    })
}
