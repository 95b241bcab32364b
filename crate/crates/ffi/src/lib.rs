//! C interface to the panoptic4d library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_read`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`P4dStatus`]; the message of the last failure on the calling
//! thread is available from [`p4d_last_error`].
//!
//! Pointer arguments must be null or valid for the stated length; handles must
//! come from this library and must not be used after being freed.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use panoptic4d::clustering::{cluster_volume, ClusterParams, Matrix, PointFeatures};
use panoptic4d::kitti_io::{read_labels, read_labels_unchecked, write_labels, PanopticLabels};
use panoptic4d::metrics::{self, EvalConfig, Evaluator};
use panoptic4d::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P4dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Invariant = 6,
    Panic = 7,
}

/// Ground-truth or predicted labels of one scan.
pub struct P4dLabels {
    inner: PanopticLabels,
}

/// Streaming metric evaluator.
pub struct P4dEvaluator {
    inner: Evaluator,
}

/// Headline scores. Undefined tracking scores (no thing segments) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct P4dScores {
    pub lstq: f64,
    pub s_cls: f64,
    pub s_assoc: f64,
    pub miou: f64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_dagger: f64,
    pub ptq: f64,
    pub sptq: f64,
    pub motsa: f64,
    pub smotsa: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    pub tubes: u64,
    pub scans: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct P4dClusterParams {
    pub assign_prob: f64,
    pub seed_stop: f64,
    pub min_points: u32,
    pub normalized_pdf: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> P4dStatus {
    match e {
        Error::Io { .. } | Error::MissingFile(_) => P4dStatus::Io,
        Error::Truncated { .. }
        | Error::Format(_)
        | Error::MalformedPose { .. }
        | Error::MissingTr(_)
        | Error::Overflow { .. } => P4dStatus::Format,
        Error::Config(_) | Error::UnknownClass(_) => P4dStatus::Config,
        Error::Invariant(_) => P4dStatus::Invariant,
        _ => P4dStatus::InvalidArgument,
    }
}

struct Fail(P4dStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(P4dStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> P4dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            P4dStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            P4dStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(P4dStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn p4d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn p4d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `sqrt(s_cls * s_assoc)`; both inputs must lie in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn p4d_lstq(s_cls: f64, s_assoc: f64, out: *mut f64) -> P4dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(0.0..=1.0).contains(&s_cls) || !(0.0..=1.0).contains(&s_assoc) {
            return Err(Fail(P4dStatus::InvalidArgument, "scores must lie in [0, 1]".into()));
        }
        *out = metrics::lstq(s_cls, s_assoc);
        Ok(())
    })
}

/// Copies `n` raw class ids and instance ids into a new labels handle.
#[no_mangle]
pub unsafe extern "C" fn p4d_labels_new(
    semantic: *const u32,
    instance: *const u32,
    n: usize,
    out: *mut *mut P4dLabels,
) -> P4dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = slice_arg(semantic, n, "semantic")?.to_vec();
        let i = slice_arg(instance, n, "instance")?.to_vec();
        let inner = PanopticLabels::new(s, i)?;
        *out = Box::into_raw(Box::new(P4dLabels { inner }));
        Ok(())
    })
}

/// Reads a `.label` file. With `expected_n` > 0 the point count is checked.
#[no_mangle]
pub unsafe extern "C" fn p4d_labels_read(path: *const c_char, expected_n: usize, out: *mut *mut P4dLabels) -> P4dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let inner = if expected_n > 0 {
            read_labels(&path, expected_n)?
        } else {
            read_labels_unchecked(&path)?
        };
        *out = Box::into_raw(Box::new(P4dLabels { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn p4d_labels_write(labels: *const P4dLabels, path: *const c_char) -> P4dStatus {
    guard(|| {
        let labels = labels.as_ref().ok_or_else(|| null("labels"))?;
        write_labels(&labels.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of points; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn p4d_labels_len(labels: *const P4dLabels) -> usize {
    labels.as_ref().map_or(0, |l| l.inner.len())
}

/// Borrowed pointer to the class ids, valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn p4d_labels_semantic(labels: *const P4dLabels) -> *const u32 {
    labels.as_ref().map_or(ptr::null(), |l| l.inner.semantic.as_ptr())
}

/// Borrowed pointer to the instance ids, valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn p4d_labels_instance(labels: *const P4dLabels) -> *const u32 {
    labels.as_ref().map_or(ptr::null(), |l| l.inner.instance.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn p4d_labels_free(labels: *mut P4dLabels) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

/// New evaluator. `config_path` may be null for the SemanticKITTI defaults.
#[no_mangle]
pub unsafe extern "C" fn p4d_evaluator_new(config_path: *const c_char, out: *mut *mut P4dEvaluator) -> P4dStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_path.is_null() {
            EvalConfig::default()
        } else {
            EvalConfig::load(path_arg(config_path)?)?
        };
        *out = Box::into_raw(Box::new(P4dEvaluator {
            inner: Evaluator::new(config),
        }));
        Ok(())
    })
}

/// Adds the next scan of sequence `sequence`; scans of one sequence must come in order.
#[no_mangle]
pub unsafe extern "C" fn p4d_evaluator_add_scan(
    evaluator: *mut P4dEvaluator,
    sequence: u32,
    gt: *const P4dLabels,
    pred: *const P4dLabels,
) -> P4dStatus {
    guard(|| {
        let ev = evaluator.as_mut().ok_or_else(|| null("evaluator"))?;
        let gt = gt.as_ref().ok_or_else(|| null("gt"))?;
        let pred = pred.as_ref().ok_or_else(|| null("pred"))?;
        ev.inner.add_scan(sequence, &gt.inner, &pred.inner)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn p4d_evaluator_scores(evaluator: *const P4dEvaluator, out: *mut P4dScores) -> P4dStatus {
    guard(|| {
        let ev = evaluator.as_ref().ok_or_else(|| null("evaluator"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = ev.inner.report();
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = P4dScores {
            lstq: r.lstq,
            s_cls: r.s_cls,
            s_assoc: r.s_assoc,
            miou: r.miou,
            pq: r.pq,
            sq: r.sq,
            rq: r.rq,
            pq_dagger: r.pq_dagger,
            ptq: r.ptq,
            sptq: r.sptq,
            motsa: nan(r.motsa),
            smotsa: nan(r.smotsa),
            precision: nan(r.precision),
            recall: nan(r.recall),
            tp: r.mots_totals.tp,
            fp: r.mots_totals.fp,
            fn_: r.mots_totals.fn_,
            ids: r.mots_totals.ids,
            tubes: r.tubes as u64,
            scans: r.scans as u64,
        };
        Ok(())
    })
}

/// Full report as a JSON document; release it with [`p4d_string_free`].
#[no_mangle]
pub unsafe extern "C" fn p4d_evaluator_report_json(evaluator: *const P4dEvaluator, out: *mut *mut c_char) -> P4dStatus {
    guard(|| {
        let ev = evaluator.as_ref().ok_or_else(|| null("evaluator"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = CString::new(ev.inner.report().to_json()).map_err(|e| Fail(P4dStatus::Invariant, e.to_string()))?;
        *out = json.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn p4d_evaluator_free(evaluator: *mut P4dEvaluator) {
    if !evaluator.is_null() {
        drop(Box::from_raw(evaluator));
    }
}

#[no_mangle]
pub unsafe extern "C" fn p4d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default clustering parameters.
#[no_mangle]
pub extern "C" fn p4d_cluster_params_default() -> P4dClusterParams {
    let d = ClusterParams::default();
    P4dClusterParams {
        assign_prob: d.assign_prob,
        seed_stop: d.seed_stop,
        min_points: d.min_points as u32,
        normalized_pdf: d.normalized_pdf,
    }
}

/// Greedy Gaussian clustering of `m` points with `d`-dimensional features and
/// variances (row-major `m×d`). Writes one instance id per point into
/// `out_ids` (0 = none) and the instance count into `out_count`. `params` may
/// be null for the defaults.
#[no_mangle]
pub unsafe extern "C" fn p4d_cluster(
    features: *const f64,
    variances: *const f64,
    objectness: *const f64,
    m: usize,
    d: usize,
    params: *const P4dClusterParams,
    out_ids: *mut u32,
    out_count: *mut u32,
) -> P4dStatus {
    guard(|| {
        if d == 0 {
            return Err(Fail(P4dStatus::InvalidArgument, "feature dimension must be positive".into()));
        }
        let len = m.checked_mul(d).ok_or_else(|| Fail(P4dStatus::InvalidArgument, "m * d overflows".into()))?;
        let f = slice_arg(features, len, "features")?.to_vec();
        let v = slice_arg(variances, len, "variances")?.to_vec();
        let o = slice_arg(objectness, m, "objectness")?;
        if m > 0 && out_ids.is_null() {
            return Err(null("out_ids"));
        }
        let count = out_count.as_mut().ok_or_else(|| null("out_count"))?;
        let p = params.as_ref().copied().unwrap_or_else(|| p4d_cluster_params_default());
        let params = ClusterParams {
            assign_prob: p.assign_prob,
            seed_stop: p.seed_stop,
            min_points: p.min_points as usize,
            normalized_pdf: p.normalized_pdf,
            ..ClusterParams::default()
        };
        let pf = PointFeatures {
            features: Matrix::from_vec(m, d, f)?,
            variances: Matrix::from_vec(m, d, v)?,
        };
        let assignment = cluster_volume(&pf, o, &params)?;
        if m > 0 {
            slice::from_raw_parts_mut(out_ids, m).copy_from_slice(&assignment.instance);
        }
        *count = assignment.instances.len() as u32;
        Ok(())
    })
}
