//! C interface to the tracker, the assignment solver, the scene generator and the metrics.
//!
//! Every function returns a [`DtStatus`]. On failure the message is available
//! from [`dt_last_error`] on the same thread until the next failing call.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use dyntrack::eval::evaluate;
use dyntrack::nets::{checkpoint, Frame, Model, ModelConfig};
use dyntrack::scenegen::{generate, read_mot, save_sequence, SceneConfig};
use dyntrack::tracker::{hungarian, step, TrackState, TrackerConfig};
use dyntrack::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// One tracked box in input pixels.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DtBox {
    pub id: u64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub score: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DtMetrics {
    pub mota: f64,
    pub idf1: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub idsw: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub num_gt: u64,
    pub num_pred: u64,
}

/// Opaque network handle.
pub struct DtModel {
    model: Arc<Model>,
}

/// Opaque per-sequence tracker handle.
pub struct DtTracker {
    model: Arc<Model>,
    config: TrackerConfig,
    state: TrackState,
    next_frame: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DtStatus {
    match e {
        Error::Io(_) => DtStatus::Io,
        Error::InvalidArgument(_) | Error::Config(_) | Error::Shape { .. } => DtStatus::InvalidArgument,
        _ => DtStatus::Data,
    }
}

struct Fail(DtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DtStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(DtStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn dt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a freshly initialized default model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dt_model_new(seed: u64, out: *mut *mut DtModel) -> DtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = Model::new(ModelConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(DtModel { model: Arc::new(model) }));
        Ok(())
    })
}

/// Loads an `STCK` checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dt_model_load(path: *const c_char, out: *mut *mut DtModel) -> DtStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = Model::from_params(checkpoint::load(path)?)?;
        *out = Box::into_raw(Box::new(DtModel { model: Arc::new(model) }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dt_model_save(model: *const DtModel, path: *const c_char) -> DtStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path, "path")?;
        checkpoint::save(model.model.params(), path)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dt_model_free(model: *mut DtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Starts a tracker over `model`. The tracker keeps the model alive on its own.
///
/// # Safety
/// `model` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dt_tracker_new(model: *const DtModel, use_motion: bool, out: *mut *mut DtTracker) -> DtStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tracker = DtTracker {
            model: Arc::clone(&model.model),
            config: TrackerConfig { use_motion, ..TrackerConfig::default() },
            state: TrackState::new(),
            next_frame: 0,
        };
        *out = Box::into_raw(Box::new(tracker));
        Ok(())
    })
}

/// Feeds the next frame (interleaved 8-bit RGB, row-major) and writes the live boxes.
///
/// `*count` receives the number of boxes. When it exceeds `capacity` the call
/// fails with `BufferTooSmall` and the tracker state is unchanged.
///
/// # Safety
/// `rgb` must hold `3·width·height` bytes, `boxes` room for `capacity` entries
/// (or be null when `capacity` is 0), and `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dt_tracker_step(
    tracker: *mut DtTracker,
    rgb: *const u8,
    width: usize,
    height: usize,
    boxes: *mut DtBox,
    capacity: usize,
    count: *mut usize,
) -> DtStatus {
    guard(|| {
        let tracker = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if count.is_null() {
            return Err(null("count"));
        }
        if boxes.is_null() && capacity > 0 {
            return Err(null("boxes"));
        }
        let len = width.checked_mul(height).and_then(|n| n.checked_mul(3)).ok_or_else(|| {
            Fail(DtStatus::InvalidArgument, format!("frame {width}×{height} is too large"))
        })?;
        let frame = Frame::from_rgb8(tracker.next_frame, width, height, std::slice::from_raw_parts(rgb, len))?;
        let mut state = tracker.state.clone();
        let result = step(&mut state, &frame, &tracker.model, &tracker.config)?;
        *count = result.tracks.len();
        if result.tracks.len() > capacity {
            return Err(Fail(DtStatus::BufferTooSmall, format!("{} boxes, capacity {capacity}", result.tracks.len())));
        }
        for (i, t) in result.tracks.iter().enumerate() {
            *boxes.add(i) =
                DtBox { id: t.id, left: t.bbox.left, top: t.bbox.top, width: t.bbox.width, height: t.bbox.height, score: t.score };
        }
        tracker.state = state;
        tracker.next_frame += 1;
        Ok(())
    })
}

/// # Safety
/// `tracker` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dt_tracker_free(tracker: *mut DtTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Min-cost assignment on a row-major `rows×cols` matrix; infinite cells are forbidden.
///
/// Writes up to `min(rows, cols)` pairs into `out_rows`/`out_cols` and their number into `*count`.
///
/// # Safety
/// `cost` must hold `rows·cols` doubles; `out_rows` and `out_cols` room for `min(rows, cols)` entries.
#[no_mangle]
pub unsafe extern "C" fn dt_hungarian(
    cost: *const f64,
    rows: usize,
    cols: usize,
    out_rows: *mut usize,
    out_cols: *mut usize,
    count: *mut usize,
) -> DtStatus {
    guard(|| {
        if count.is_null() {
            return Err(null("count"));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| Fail(DtStatus::InvalidArgument, "matrix too large".into()))?;
        if n > 0 && (cost.is_null() || out_rows.is_null() || out_cols.is_null()) {
            return Err(null("cost or output"));
        }
        let flat = if n == 0 { &[][..] } else { std::slice::from_raw_parts(cost, n) };
        if flat.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
            return Err(Fail(DtStatus::InvalidArgument, "costs must be finite or +inf".into()));
        }
        let matrix: Vec<Vec<f64>> = if cols == 0 { vec![Vec::new(); rows] } else { flat.chunks(cols).map(<[f64]>::to_vec).collect() };
        let pairs = hungarian(&matrix);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            *out_rows.add(k) = i;
            *out_cols.add(k) = j;
        }
        *count = pairs.len();
        Ok(())
    })
}

/// Scores a MOTChallenge results file against a ground-truth file.
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dt_evaluate(
    gt_path: *const c_char,
    results_path: *const c_char,
    iou_threshold: f64,
    out: *mut DtMetrics,
) -> DtStatus {
    guard(|| {
        let gt = read_mot(path_arg(gt_path, "gt_path")?)?;
        let res = read_mot(path_arg(results_path, "results_path")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = evaluate(&gt, &res, iou_threshold)?;
        *out = DtMetrics {
            mota: r.mota,
            idf1: r.idf1,
            hota: r.hota,
            deta: r.deta,
            assa: r.assa,
            idsw: r.idsw as u64,
            false_positives: r.fp as u64,
            false_negatives: r.r#fn as u64,
            num_gt: r.num_gt as u64,
            num_pred: r.num_pred as u64,
        };
        Ok(())
    })
}

/// Generates a preset scene (`random`, `crossing`, `static`, `uniform-crossing`) into `out_dir`.
///
/// # Safety
/// Both strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dt_generate(preset: *const c_char, seed: u64, out_dir: *const c_char) -> DtStatus {
    guard(|| {
        let name = path_arg(preset, "preset")?.to_string_lossy().into_owned();
        let dir = path_arg(out_dir, "out_dir")?;
        save_sequence(dir, &generate(&SceneConfig::preset(&name, seed)?)?)?;
        Ok(())
    })
}
