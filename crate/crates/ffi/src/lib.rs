//! C ABI over `prdl-core`.
//!
//! Objects are opaque handles created by `*_new`/`*_load` functions and
//! released with the matching `*_free`. Every call returns a [`PrdlStatus`];
//! on failure [`prdl_last_error`] describes the problem until the next call
//! on the same thread. Point arrays are interleaved `x0, y0, x1, y1, ...`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use prdl_core::config::RunConfig;
use prdl_core::fitting::{fit, FitProblem};
use prdl_core::ingest::{prepare_targets, LabelMap, LandmarkSet, Manifest, PartMask};
use prdl_core::metrics::part_iou;
use prdl_core::model::{gen_toy_model, load_model, toy_camera, BlendshapeModel, ShapeParams};
use prdl_core::prdl::{descriptor_of, prdl_value_and_gradient, AnchorGrid, DescriptorTensor, DistanceFn, DistanceFunctionSet, PartInput};
use prdl_core::{Error, Point2};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrdlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EmptySet = 3,
    Format = 4,
    Projection = 5,
    Annotation = 6,
    NothingToFit = 7,
    NumericalAbort = 8,
    Io = 9,
    Panic = 10,
}

/// Bit for `min` in a function mask.
pub const PRDL_FN_MIN: u32 = 1;
/// Bit for `max` in a function mask.
pub const PRDL_FN_MAX: u32 = 2;
/// Bit for `ave` in a function mask.
pub const PRDL_FN_AVE: u32 = 4;

/// Blendshape model handle.
pub struct PrdlModel(BlendshapeModel);

/// Anchor set handle.
pub struct PrdlAnchors(AnchorGrid);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PrdlStatus {
    match e {
        Error::EmptySet => PrdlStatus::EmptySet,
        Error::InvalidArgument(_) => PrdlStatus::InvalidArgument,
        Error::Format(_) => PrdlStatus::Format,
        Error::Projection(_) => PrdlStatus::Projection,
        Error::Annotation(_) => PrdlStatus::Annotation,
        Error::NothingToFit => PrdlStatus::NothingToFit,
        Error::NumericalAbort(_) => PrdlStatus::NumericalAbort,
        Error::Io(_) => PrdlStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PrdlStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrdlStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            PrdlStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PrdlStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<*const T, Fail> {
    if p.is_null() { Err(Fail::Null(what)) } else { Ok(p) }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a Path, Fail> {
    let s = CStr::from_ptr(nonnull(p, what)?)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn points_arg<'a>(xy: *const f64, n: usize, what: &'static str) -> Result<Vec<Point2>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let s = std::slice::from_raw_parts(nonnull(xy, what)?, 2 * n);
    let pts: Vec<Point2> = s.chunks(2).map(|c| Point2::new(c[0], c[1])).collect();
    if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} has non-finite coordinates")).into());
    }
    Ok(pts)
}

fn functions(mask: u32) -> Result<DistanceFunctionSet, Fail> {
    let mut f = Vec::new();
    for (bit, d) in [(PRDL_FN_MIN, DistanceFn::Min), (PRDL_FN_MAX, DistanceFn::Max), (PRDL_FN_AVE, DistanceFn::Ave)] {
        if mask & bit != 0 {
            f.push(d);
        }
    }
    if f.is_empty() || mask & !7 != 0 {
        return Err(Error::InvalidArgument(format!("bad function mask {mask}")).into());
    }
    Ok(DistanceFunctionSet::new(&f)?)
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn prdl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model container file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn prdl_model_load(path: *const c_char, out: *mut *mut PrdlModel) -> PrdlStatus {
    guard(|| {
        nonnull(out, "out")?;
        let m = load_model(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PrdlModel(m)));
        Ok(())
    })
}

/// Builds the deterministic toy model. When `truth` is not null it receives
/// the sampled ground truth as `k_id + k_exp + 6` values (identity,
/// expression, three angles, translation).
///
/// # Safety
/// `out` must be valid; `truth`, if not null, must hold the stated count.
#[no_mangle]
pub unsafe extern "C" fn prdl_model_toy(
    seed: u64,
    n_vertices: usize,
    k_id: usize,
    k_exp: usize,
    out: *mut *mut PrdlModel,
    truth: *mut f64,
) -> PrdlStatus {
    guard(|| {
        nonnull(out, "out")?;
        let t = gen_toy_model(seed, n_vertices, k_id, k_exp)?;
        if !truth.is_null() {
            let v = t.truth.to_vec();
            ptr::copy_nonoverlapping(v.as_ptr(), truth, v.len());
        }
        *out = Box::into_raw(Box::new(PrdlModel(t.model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn prdl_model_free(model: *mut PrdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vertex count and basis sizes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn prdl_model_dims(model: *const PrdlModel, n_vertices: *mut usize, k_id: *mut usize, k_exp: *mut usize) -> PrdlStatus {
    guard(|| {
        let m = &(*nonnull(model, "model")?).0;
        nonnull(n_vertices, "n_vertices")?;
        nonnull(k_id, "k_id")?;
        nonnull(k_exp, "k_exp")?;
        *n_vertices = m.n_vertices();
        *k_id = m.k_id();
        *k_exp = m.k_exp();
        Ok(())
    })
}

/// Every pixel centre of a `width` x `height` image, row-major.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn prdl_anchors_lattice(width: usize, height: usize, out: *mut *mut PrdlAnchors) -> PrdlStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = Box::into_raw(Box::new(PrdlAnchors(AnchorGrid::lattice(width, height)?)));
        Ok(())
    })
}

/// Farthest-point subsample of `k` anchors starting from `start_index`.
///
/// # Safety
/// `anchors` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn prdl_anchors_subsample(anchors: *const PrdlAnchors, k: usize, start_index: usize, out: *mut *mut PrdlAnchors) -> PrdlStatus {
    guard(|| {
        let a = &(*nonnull(anchors, "anchors")?).0;
        nonnull(out, "out")?;
        *out = Box::into_raw(Box::new(PrdlAnchors(a.subsample(k, start_index)?)));
        Ok(())
    })
}

/// # Safety
/// `anchors` must be valid; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn prdl_anchors_len(anchors: *const PrdlAnchors, len: *mut usize) -> PrdlStatus {
    guard(|| {
        let a = &(*nonnull(anchors, "anchors")?).0;
        nonnull(len, "len")?;
        *len = a.len();
        Ok(())
    })
}

/// # Safety
/// `anchors` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn prdl_anchors_free(anchors: *mut PrdlAnchors) {
    if !anchors.is_null() {
        drop(Box::from_raw(anchors));
    }
}

/// Descriptor of `n` points: `anchors_len * popcount(fn_mask)` values,
/// anchor-major, functions in min, max, ave order.
///
/// # Safety
/// `xy` holds `2n` values; `out` has room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn prdl_descriptor(
    xy: *const f64,
    n: usize,
    anchors: *const PrdlAnchors,
    fn_mask: u32,
    out: *mut f64,
    out_len: usize,
) -> PrdlStatus {
    guard(|| {
        let a = &(*nonnull(anchors, "anchors")?).0;
        let f = functions(fn_mask)?;
        let pts = points_arg(xy, n, "xy")?;
        let d = descriptor_of(&pts, a, &f)?;
        if out_len != d.values().len() {
            return Err(Error::InvalidArgument(format!("out_len is {out_len}, need {}", d.values().len())).into());
        }
        ptr::copy_nonoverlapping(d.values().as_ptr(), nonnull(out, "out")? as *mut f64, out_len);
        Ok(())
    })
}

/// Single-part PRDL loss of `n` predicted points against a target
/// descriptor laid out as [`prdl_descriptor`] writes it, normalized by
/// `height * width`. `grad` (nullable) receives `2n` values.
///
/// # Safety
/// Array lengths must match the stated counts.
#[no_mangle]
pub unsafe extern "C" fn prdl_loss(
    xy: *const f64,
    n: usize,
    target: *const f64,
    anchors: *const PrdlAnchors,
    fn_mask: u32,
    height: usize,
    width: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> PrdlStatus {
    guard(|| {
        let a = &(*nonnull(anchors, "anchors")?).0;
        let f = functions(fn_mask)?;
        let pts = points_arg(xy, n, "xy")?;
        nonnull(loss, "loss")?;
        let m = a.len() * f.len();
        let t = std::slice::from_raw_parts(nonnull(target, "target")?, m).to_vec();
        let td = DescriptorTensor::from_values(a.len(), f.clone(), t)?;
        let parts = [PartInput { pred: &pts, target: &td, weight: 1.0 }];
        let e = prdl_value_and_gradient(&parts, a, &f, height, width)?;
        *loss = e.loss;
        if !grad.is_null() {
            for (k, g) in e.gradients[0].iter().enumerate() {
                *grad.add(2 * k) = g.x;
                *grad.add(2 * k + 1) = g.y;
            }
        }
        Ok(())
    })
}

/// IoU of two `width * height` byte masks (non-zero = set).
///
/// # Safety
/// Both masks hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn prdl_part_iou(pred: *const u8, gt: *const u8, width: usize, height: usize, iou: *mut f64) -> PrdlStatus {
    guard(|| {
        nonnull(iou, "iou")?;
        let len = width.checked_mul(height).ok_or_else(|| Error::InvalidArgument("mask too large".into()))?;
        let mask = |p: *const u8, what| -> Result<PartMask, Fail> {
            let s = std::slice::from_raw_parts(nonnull(p, what)?, len);
            Ok(PartMask::from_bits(width, height, s.iter().map(|&b| b != 0).collect())?)
        };
        *iou = part_iou(&mask(pred, "pred")?, &mask(gt, "gt")?)?;
        Ok(())
    })
}

/// Fits `model` to a label-map file. `config_path` (nullable) is a run
/// config TOML; its camera, weights, fit and preprocess sections apply. On
/// success `report_json` receives the JSON report, to be released with
/// [`prdl_string_free`].
///
/// # Safety
/// Strings must be NUL-terminated; `report_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn prdl_fit_label_map(
    model: *const PrdlModel,
    label_map_path: *const c_char,
    config_path: *const c_char,
    report_json: *mut *mut c_char,
) -> PrdlStatus {
    guard(|| {
        let m = &(*nonnull(model, "model")?).0;
        nonnull(report_json, "report_json")?;
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(path_arg(config_path, "config_path")?)?
        };
        let map = LabelMap::read(path_arg(label_map_path, "label_map_path")?)?;
        let manifest = Manifest::standard(map.width, map.height);
        let camera = cfg.camera.unwrap_or_else(|| toy_camera(map.width, map.height));
        let targets = prepare_targets(&map, &manifest, &cfg.preprocess)?;
        let problem = FitProblem::new(targets, Some(map.part_masks(&manifest)?), LandmarkSet::default(), &cfg.fit)?;
        let init: ShapeParams = m.zero_params();
        let report = fit(m, &camera, &problem, &cfg.fit, &cfg.weights, &init)?;
        let json = serde_json::to_string(&report).map_err(|e| Error::Format(e.to_string()))?;
        *report_json = CString::new(json).map_err(|e| Error::Format(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn prdl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
