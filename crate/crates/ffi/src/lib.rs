//! C ABI over the eacnet model.
//!
//! Every function returns an [`EacStatus`]; on failure the message is available
//! from [`eac_last_error`] on the same thread until the next failing call.
//! Handles come from [`eac_model_load`] and must be released with [`eac_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use eacnet::data::IMAGE_SIZE;
use eacnet::geometry::{attention_from_landmarks, au_centers, LandmarkSet, GRID, NUM_CENTERS, NUM_LANDMARKS};
use eacnet::model::{load_checkpoint, FaceGeometry, Mode, Model, NUM_OUTPUTS};
use eacnet::tensor::Tensor;
use eacnet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Runtime = 6,
    Panic = 7,
}

/// Opaque network handle.
pub struct EacModel {
    model: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EacStatus {
    match e {
        Error::Io { .. } => EacStatus::Io,
        Error::BadMagic(_) | Error::UnsupportedVersion { .. } | Error::Truncated(_) | Error::ImageParse(_) | Error::Parse { .. } => EacStatus::Format,
        Error::Shape(_) | Error::ParamShape { .. } => EacStatus::Shape,
        e if e.is_validation() => EacStatus::InvalidArgument,
        _ => EacStatus::Runtime,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (EacStatus, String)>) -> EacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EacStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            EacStatus::Panic
        }
    }
}

fn lift(e: Error) -> (EacStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (EacStatus, String) {
    (EacStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> (EacStatus, String) {
    (EacStatus::InvalidArgument, msg)
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn eac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Side length of the square input images.
#[no_mangle]
pub extern "C" fn eac_input_size() -> usize {
    IMAGE_SIZE
}

/// Number of AU probabilities per sample.
#[no_mangle]
pub extern "C" fn eac_num_outputs() -> usize {
    NUM_OUTPUTS
}

/// Loads a checkpoint into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eac_model_load(path: *const c_char, out: *mut *mut EacModel) -> EacStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8".into()))?;
        let model = load_checkpoint(Path::new(p)).map_err(lift)?;
        *out = Box::into_raw(Box::new(EacModel { model }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from [`eac_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eac_model_free(model: *mut EacModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Variant code: 0 FVGG, 1 E-Net, 2 EAC.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eac_model_variant(model: *const EacModel, out: *mut u8) -> EacStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.spec().variant.code();
        Ok(())
    })
}

/// Width of the penultimate feature vector.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eac_model_feature_width(model: *const EacModel, out: *mut usize) -> EacStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.spec().fc_width();
        Ok(())
    })
}

fn landmark_set(points: *const f64, width: u32, height: u32) -> Result<LandmarkSet, (EacStatus, String)> {
    let xy = unsafe { std::slice::from_raw_parts(points, 2 * NUM_LANDMARKS) };
    let pts = xy.chunks(2).map(|p| (p[0], p[1])).collect();
    LandmarkSet::new(pts, width, height).map_err(lift)
}

/// Images `[n, 3, S, S]` plus optional landmarks, checked against the model.
unsafe fn inputs(
    m: &EacModel,
    images: *const f32,
    n: usize,
    landmarks: *const f64,
    width: u32,
    height: u32,
) -> Result<(Tensor<f32>, Option<Vec<FaceGeometry>>), (EacStatus, String)> {
    if images.is_null() {
        return Err(null("images"));
    }
    if n == 0 {
        return Err(invalid("n must be at least 1".into()));
    }
    let per = 3 * IMAGE_SIZE * IMAGE_SIZE;
    let data = std::slice::from_raw_parts(images, n * per).to_vec();
    let x = Tensor::new(&[n, 3, IMAGE_SIZE, IMAGE_SIZE], data).map_err(|e| lift(e.into()))?;
    let faces = if m.model.spec().variant.uses_attention() {
        if landmarks.is_null() {
            return Err(null("landmarks (required by this variant)"));
        }
        let mut faces = Vec::with_capacity(n);
        for i in 0..n {
            let l = landmark_set(landmarks.add(i * 2 * NUM_LANDMARKS), width, height)?;
            faces.push(FaceGeometry::from_landmarks(&l).map_err(lift)?);
        }
        Some(faces)
    } else {
        None
    };
    Ok((x, faces))
}

/// AU probabilities for `n` images.
///
/// `images` holds `n·3·S·S` floats in `[0, 1]`, planar RGB, with `S` from
/// [`eac_input_size`]. `landmarks` holds `n·68` `(x, y)` pairs in pixels of a
/// `width×height` frame and may be null for FVGG models. `out` receives `n·12` values.
///
/// # Safety
/// All pointers must be valid for the lengths above.
#[no_mangle]
pub unsafe extern "C" fn eac_model_forward(
    model: *const EacModel,
    images: *const f32,
    n: usize,
    landmarks: *const f64,
    width: u32,
    height: u32,
    out: *mut f32,
) -> EacStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (x, faces) = inputs(m, images, n, landmarks, width, height)?;
        let pass = m.model.forward(&x, faces.as_deref(), Mode::Eval).map_err(lift)?;
        std::slice::from_raw_parts_mut(out, n * NUM_OUTPUTS).copy_from_slice(pass.probs.data());
        Ok(())
    })
}

/// Penultimate features for `n` images; `out` receives `n·width` values where
/// `width` comes from [`eac_model_feature_width`]. Inputs as in [`eac_model_forward`].
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn eac_model_features(
    model: *const EacModel,
    images: *const f32,
    n: usize,
    landmarks: *const f64,
    width: u32,
    height: u32,
    out: *mut f32,
) -> EacStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (x, faces) = inputs(m, images, n, landmarks, width, height)?;
        let f = m.model.extract_features(&x, faces.as_deref()).map_err(lift)?;
        std::slice::from_raw_parts_mut(out, f.len()).copy_from_slice(f.data());
        Ok(())
    })
}

/// The 100×100 attention map of one face, row-major, into `out`.
///
/// # Safety
/// `points` must hold 68 `(x, y)` pairs and `out` room for 10000 doubles.
#[no_mangle]
pub unsafe extern "C" fn eac_attention_from_points(points: *const f64, width: u32, height: u32, out: *mut f64) -> EacStatus {
    guard(|| {
        if points.is_null() {
            return Err(null("points"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let map = attention_from_landmarks(&landmark_set(points, width, height)?).map_err(lift)?;
        std::slice::from_raw_parts_mut(out, GRID * GRID).copy_from_slice(map.grid());
        Ok(())
    })
}

/// The 20 AU centers of one face as `(x, y)` pairs on the 100×100 grid.
///
/// # Safety
/// `points` must hold 68 `(x, y)` pairs and `out` room for 40 doubles.
#[no_mangle]
pub unsafe extern "C" fn eac_au_centers(points: *const f64, width: u32, height: u32, out: *mut f64) -> EacStatus {
    guard(|| {
        if points.is_null() {
            return Err(null("points"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let c = au_centers(&landmark_set(points, width, height)?).map_err(lift)?;
        let dst = std::slice::from_raw_parts_mut(out, 2 * NUM_CENTERS);
        for (pair, center) in dst.chunks_mut(2).zip(&c.centers) {
            pair[0] = center.position.0;
            pair[1] = center.position.1;
        }
        Ok(())
    })
}
