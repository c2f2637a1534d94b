//! C ABI over `von`.
//!
//! Every function returns a [`VonStatus`]; on failure a message is available
//! from [`von_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their matching `_free` function. Panics are caught
//! at the boundary and reported as [`VonStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use von::baselines::Method;
use von::{CheckpointInfo, Metric, MetricContext, Model, Ordering, PointSet, QualityMetric, VonError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownMetric = 3,
    DegenerateMetric = 4,
    DimensionMismatch = 5,
    MetricMismatch = 6,
    Checkpoint = 7,
    Io = 8,
    Timeout = 9,
    BufferTooSmall = 10,
    Panic = 11,
    Other = 12,
}

/// A point set: `n` rows of `dim` coordinates.
pub struct VonPointSet {
    points: PointSet,
}

/// A trained model and the metric it was trained on.
pub struct VonModel {
    model: Model,
    info: CheckpointInfo,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &VonError) -> VonStatus {
    match e.root() {
        VonError::UnknownMetric(_) => VonStatus::UnknownMetric,
        VonError::DegenerateMetric { .. } => VonStatus::DegenerateMetric,
        VonError::DimensionMismatch { .. } => VonStatus::DimensionMismatch,
        VonError::MetricMismatch { .. } => VonStatus::MetricMismatch,
        VonError::Checkpoint(_) => VonStatus::Checkpoint,
        VonError::Io { .. } => VonStatus::Io,
        VonError::Timeout { .. } => VonStatus::Timeout,
        VonError::Config(_)
        | VonError::Domain(_)
        | VonError::InvalidPointSet(_)
        | VonError::InvalidOrdering(_)
        | VonError::MissingContext { .. }
        | VonError::BruteForceGuard { .. }
        | VonError::Parse { .. }
        | VonError::Json(_) => VonStatus::InvalidArgument,
        _ => VonStatus::Other,
    }
}

/// Failure carried to the boundary: a status and its message.
struct Fail(VonStatus, String);

impl From<VonError> for Fail {
    fn from(e: VonError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VonStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VonStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VonStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(format!("panic: {}", msg.unwrap_or_default()));
            VonStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(VonStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn parse_metric(key: &str) -> Result<Metric, Fail> {
    Ok(key.parse::<Metric>()?)
}

/// Writes `order` into a caller buffer of `capacity` entries.
unsafe fn write_order(order: &Ordering, out: *mut usize, capacity: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out_order"));
    }
    if capacity < order.len() {
        return Err(Fail(VonStatus::BufferTooSmall, format!("order has {} entries, buffer holds {capacity}", order.len())));
    }
    ptr::copy_nonoverlapping(order.as_slice().as_ptr(), out, order.len());
    Ok(())
}

/// The library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn von_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null after a success.
/// Valid until the next `von_*` call on the same thread.
#[no_mangle]
pub extern "C" fn von_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Copies `n * dim` row-major coordinates into a new point set.
///
/// # Safety
/// `coords` must point to `n * dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn von_point_set_new(coords: *const f64, n: usize, dim: usize, out: *mut *mut VonPointSet) -> VonStatus {
    guard(|| {
        if coords.is_null() {
            return Err(null("coords"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| Fail(VonStatus::InvalidArgument, "n * dim overflows".into()))?;
        let points = PointSet::new(std::slice::from_raw_parts(coords, len).to_vec(), n, dim)?;
        *out = Box::into_raw(Box::new(VonPointSet { points }));
        Ok(())
    })
}

/// # Safety
/// `ps` must come from [`von_point_set_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn von_point_set_free(ps: *mut VonPointSet) {
    if !ps.is_null() {
        drop(Box::from_raw(ps));
    }
}

/// # Safety
/// `ps` must be a live point set; `n` and `dim` writable or null.
#[no_mangle]
pub unsafe extern "C" fn von_point_set_shape(ps: *const VonPointSet, n: *mut usize, dim: *mut usize) -> VonStatus {
    guard(|| {
        let ps = &handle(ps, "ps")?.points;
        if !n.is_null() {
            *n = ps.n();
        }
        if !dim.is_null() {
            *dim = ps.dim();
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `von train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn von_model_load(path: *const c_char, out: *mut *mut VonModel) -> VonStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, info) = Model::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(VonModel { model, info }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`von_model_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn von_model_free(model: *mut VonModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn von_model_input_dim(model: *const VonModel, out: *mut usize) -> VonStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.input_dim();
        Ok(())
    })
}

/// Copies the training metric's key, NUL-terminated, into `buf`.
///
/// # Safety
/// `model` must be live; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn von_model_metric(model: *const VonModel, buf: *mut c_char, capacity: usize) -> VonStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let key = m.info.metric.to_string();
        if capacity <= key.len() {
            return Err(Fail(VonStatus::BufferTooSmall, format!("metric key needs {} bytes", key.len() + 1)));
        }
        ptr::copy_nonoverlapping(key.as_ptr().cast::<c_char>(), buf, key.len());
        *buf.add(key.len()) = 0;
        Ok(())
    })
}

/// Greedy ordering of `points`; writes `n` indices and the loss under the
/// checkpoint's metric.
///
/// # Safety
/// Handles must be live; `out_order` must hold `capacity` entries; `out_loss` writable or null.
#[no_mangle]
pub unsafe extern "C" fn von_model_order(
    model: *const VonModel,
    points: *const VonPointSet,
    out_order: *mut usize,
    capacity: usize,
    out_loss: *mut f64,
) -> VonStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ps = &handle(points, "points")?.points;
        let inst = von::instance::Instance::from_points(m.info.metric, &m.info.metric_params, ps.clone())?;
        let order = m.model.greedy(&inst.input)?;
        let loss = m.info.metric.loss(&inst.ctx, &order)?;
        write_order(&order, out_order, capacity)?;
        if !out_loss.is_null() {
            *out_loss = loss;
        }
        Ok(())
    })
}

/// Orders `points` with a classical method (`sa`, `sa-tuned`, `nn`, `sm`, `rs`, `brute`).
///
/// # Safety
/// Strings NUL-terminated; `points` live; `out_order` holds `capacity` entries; `out_loss` writable or null.
#[no_mangle]
pub unsafe extern "C" fn von_baseline_order(
    method: *const c_char,
    metric: *const c_char,
    points: *const VonPointSet,
    seed: u64,
    out_order: *mut usize,
    capacity: usize,
    out_loss: *mut f64,
) -> VonStatus {
    guard(|| {
        let method: Method = text(method, "method")?.parse()?;
        let metric = parse_metric(text(metric, "metric")?)?;
        let ps = &handle(points, "points")?.points;
        let inst = von::instance::Instance::from_points(metric, &Default::default(), ps.clone())?;
        let (order, loss) = method.solve(&inst.ctx, &metric, &mut ChaCha8Rng::seed_from_u64(seed))?;
        write_order(&order, out_order, capacity)?;
        if !out_loss.is_null() {
            *out_loss = loss;
        }
        Ok(())
    })
}

/// Native score of `order` over `points` under `metric`.
///
/// # Safety
/// `metric` NUL-terminated; `points` live; `order` holds `len` entries; `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn von_metric_score(
    metric: *const c_char,
    points: *const VonPointSet,
    order: *const usize,
    len: usize,
    out_score: *mut f64,
) -> VonStatus {
    guard(|| {
        let metric = parse_metric(text(metric, "metric")?)?;
        let ps = &handle(points, "points")?.points;
        if order.is_null() {
            return Err(null("order"));
        }
        if out_score.is_null() {
            return Err(null("out_score"));
        }
        let order = Ordering::new(std::slice::from_raw_parts(order, len).to_vec())?;
        let ctx: MetricContext = von::instance::Instance::from_points(metric, &Default::default(), ps.clone())?.ctx;
        *out_score = metric.score(&ctx, &order)?;
        Ok(())
    })
}
