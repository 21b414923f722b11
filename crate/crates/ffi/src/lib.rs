//! C ABI over the splatclean pruning engine.
//!
//! Objects cross the boundary as opaque handles created by the `sc_*_load`
//! functions (reports by `sc_prune`) and released with the matching
//! `sc_*_free`. Every fallible call returns an [`ScStatus`]; on failure a
//! message is kept in thread-local storage and can be read with
//! [`sc_last_error_message`].
//! Panics are caught at the boundary and reported as `SC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::Vector3;
use splatclean::bundle::read_bundle;
use splatclean::config::PruneSection;
use splatclean::evidence::EvidenceLedger;
use splatclean::knn::knn_mean_distance;
use splatclean::model::{Scene, SplatCloud};
use splatclean::pipeline::prune_cloud;
use splatclean::ply::{load_ply_with, save_ply, PlyLoadOptions};
use splatclean::pruning::PruneReport;
use splatclean::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Format = 5,
    Shape = 6,
    Index = 7,
    InvalidArgument = 8,
    NonFinite = 9,
    Config = 10,
    Json = 11,
    Panic = 12,
}

/// A Gaussian cloud.
pub struct ScCloud(SplatCloud);

/// Per-Gaussian evidence sidecar.
pub struct ScEvidence(EvidenceLedger);

/// Cameras and targets of a scene bundle directory.
pub struct ScScene(Scene);

/// Result of a pruning pass.
pub struct ScReport {
    report: PruneReport,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ScStatus {
    match e {
        Error::Io { .. } => ScStatus::Io,
        Error::Parse { .. } => ScStatus::Parse,
        Error::Format(_) => ScStatus::Format,
        Error::Shape(_) => ScStatus::Shape,
        Error::Index { .. } => ScStatus::Index,
        Error::InvalidArgument(_) => ScStatus::InvalidArgument,
        Error::NonFinite(_) => ScStatus::NonFinite,
        Error::Config(_) => ScStatus::Config,
        Error::Json(_) => ScStatus::Json,
    }
}

struct Fail(ScStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ScStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            ScStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(ScStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ScStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a 3DGS PLY file. Files without an `importance` property get
/// `default_importance_logit`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_cloud_load_ply(
    path: *const c_char,
    default_importance_logit: f64,
    out: *mut *mut ScCloud,
) -> ScStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let cloud = load_ply_with(&path, PlyLoadOptions { default_importance_logit })?;
        *out = Box::into_raw(Box::new(ScCloud(cloud)));
        Ok(())
    })
}

/// # Safety
/// `cloud` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sc_cloud_save_ply(cloud: *const ScCloud, path: *const c_char) -> ScStatus {
    guard(|| {
        let cloud = ref_arg(cloud, "cloud")?;
        save_ply(&cloud.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `cloud` must be a live handle and `out_len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_cloud_len(cloud: *const ScCloud, out_len: *mut usize) -> ScStatus {
    guard(|| {
        *out_arg(out_len, "out_len")? = ref_arg(cloud, "cloud")?.0.len();
        Ok(())
    })
}

/// Copies the centers as `x, y, z` triples into `out`, which must hold
/// `3 * capacity` doubles. Fails with `SC_STATUS_SHAPE` when `capacity` is
/// smaller than the cloud.
///
/// # Safety
/// `out` must point to at least `3 * capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_cloud_centers(cloud: *const ScCloud, out: *mut f64, capacity: usize) -> ScStatus {
    guard(|| {
        let cloud = &ref_arg(cloud, "cloud")?.0;
        if cloud.len() > capacity {
            return Err(Fail(
                ScStatus::Shape,
                format!("buffer holds {capacity} centers, cloud has {}", cloud.len()),
            ));
        }
        if cloud.is_empty() {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let buf = std::slice::from_raw_parts_mut(out, 3 * cloud.len());
        for (dst, g) in buf.chunks_exact_mut(3).zip(&cloud.gaussians) {
            dst.copy_from_slice(g.center.as_slice());
        }
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sc_cloud_free(cloud: *mut ScCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Loads an evidence sidecar written by training.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_evidence_load(path: *const c_char, out: *mut *mut ScEvidence) -> ScStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ledger = EvidenceLedger::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(ScEvidence(ledger)));
        Ok(())
    })
}

/// # Safety
/// `evidence` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sc_evidence_free(evidence: *mut ScEvidence) {
    if !evidence.is_null() {
        drop(Box::from_raw(evidence));
    }
}

/// Loads the cameras, targets and depth priors of a bundle directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_scene_load(dir: *const c_char, out: *mut *mut ScScene) -> ScStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let b = read_bundle(&path_arg(dir, "dir")?, None, PlyLoadOptions::default())?;
        *out = Box::into_raw(Box::new(ScScene(b.scene)));
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle and `out_count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_scene_view_count(scene: *const ScScene, out_count: *mut usize) -> ScStatus {
    guard(|| {
        *out_arg(out_count, "out_count")? = ref_arg(scene, "scene")?.0.views.len();
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sc_scene_free(scene: *mut ScScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Runs one pruning pass on `cloud` in place.
///
/// With `evidence` the sidecar drives the visibility, gradient and age
/// tests; it must match the cloud length and is compacted alongside the
/// cloud. Without evidence, `scene` supplies the cameras for offline
/// visibility counting. `config_json` is an optional JSON object with the
/// fields of the prune section (null for defaults).
///
/// # Safety
/// Handles must be live or null where allowed; `config_json` must be null or
/// a NUL-terminated string; `out_report` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_prune(
    cloud: *mut ScCloud,
    evidence: *mut ScEvidence,
    scene: *const ScScene,
    config_json: *const c_char,
    out_report: *mut *mut ScReport,
) -> ScStatus {
    guard(|| {
        let out = out_arg(out_report, "out_report")?;
        *out = ptr::null_mut();
        let cloud = &mut cloud.as_mut().ok_or_else(|| null("cloud"))?.0;
        let cfg: PruneSection = if config_json.is_null() {
            PruneSection::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| Fail(ScStatus::Config, e.to_string()))?
        };
        let evidence = evidence.as_mut();
        let (views, bg) = match scene.as_ref() {
            Some(s) => (&s.0.views[..], s.0.background),
            None => (&[][..], [0.0; 3]),
        };
        let report = match evidence {
            Some(ev) => {
                let ledger = ev.0.clone();
                let report = prune_cloud(cloud, Some(ledger), views, bg, &cfg)?;
                ev.0.remove(&report.removed_indices())?;
                report
            }
            None => prune_cloud(cloud, None, views, bg, &cfg)?,
        };
        let json = serde_json::to_string(&report).map_err(Error::from)?;
        let json = CString::new(json).map_err(|e| Fail(ScStatus::Format, e.to_string()))?;
        *out = Box::into_raw(Box::new(ScReport { report, json }));
        Ok(())
    })
}

/// Number of removed Gaussians.
///
/// # Safety
/// `report` must be a live handle and `out_count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sc_report_removed_count(report: *const ScReport, out_count: *mut usize) -> ScStatus {
    guard(|| {
        *out_arg(out_count, "out_count")? = ref_arg(report, "report")?.report.removed.len();
        Ok(())
    })
}

/// Copies the removed indices (into the cloud as it was before the pass,
/// ascending) into `out`. Fails with `SC_STATUS_SHAPE` if `capacity` is too
/// small.
///
/// # Safety
/// `out` must point to at least `capacity` writable elements.
#[no_mangle]
pub unsafe extern "C" fn sc_report_removed_indices(report: *const ScReport, out: *mut usize, capacity: usize) -> ScStatus {
    guard(|| {
        let idx = ref_arg(report, "report")?.report.removed_indices();
        if idx.len() > capacity {
            return Err(Fail(
                ScStatus::Shape,
                format!("buffer holds {capacity} indices, report has {}", idx.len()),
            ));
        }
        if idx.is_empty() {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, idx.len()).copy_from_slice(&idx);
        Ok(())
    })
}

/// Full report as JSON. The string is owned by the report handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_report_json(report: *const ScReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.json.as_ptr())
}

/// # Safety
/// `report` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sc_report_free(report: *mut ScReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Mean distance from each of `count` points (packed `x, y, z`) to its `k`
/// nearest other points, written to `out`.
///
/// # Safety
/// `points` must hold `3 * count` doubles and `out` room for `count`.
#[no_mangle]
pub unsafe extern "C" fn sc_knn_mean_distance(points: *const f64, count: usize, k: usize, out: *mut f64) -> ScStatus {
    guard(|| {
        if count == 0 {
            return Ok(());
        }
        if points.is_null() {
            return Err(null("points"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let centers: Vec<Vector3<f64>> = std::slice::from_raw_parts(points, 3 * count)
            .chunks_exact(3)
            .map(Vector3::from_column_slice)
            .collect();
        let queries: Vec<usize> = (0..count).collect();
        let d = knn_mean_distance(&centers, &queries, k)?;
        std::slice::from_raw_parts_mut(out, count).copy_from_slice(&d);
        Ok(())
    })
}
