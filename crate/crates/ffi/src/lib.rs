//! C ABI over `mar-core`.
//!
//! Objects are opaque handles created by `mar_*_new`/`mar_*_load` and
//! released by the matching `mar_*_free`. Every fallible call returns a
//! [`MarStatus`]; on failure [`mar_last_error`] describes the cause. Arrays
//! are row-major `double` (images in HU unless stated, sinograms as line
//! integrals) or `uint8_t` masks with 0 for false, and every buffer comes
//! with its length, which is checked against the geometry.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use mar_core::geometry::toy_geometry;
use mar_core::image::{Image, Sinogram, Unit};
use mar_core::mar::{li_complete, metal_trace, MetalMask, MetalTrace};
use mar_core::nn::Model;
use mar_core::pipeline::correct_scan;
use mar_core::projector::Projector;
use mar_core::MarError;

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// A buffer length does not match the geometry.
    BadLength = 2,
    /// Invalid geometry, configuration or argument.
    InvalidArgument = 3,
    /// Malformed or inconsistent data.
    Data = 4,
    /// File could not be read or written.
    Io = 5,
    /// Non-finite values appeared during computation.
    Divergence = 6,
    /// Internal error; the library caught a panic.
    Internal = 7,
}

/// Scan geometry with its precomputed projector.
pub struct MarGeometry {
    projector: Projector,
}

/// Trained model together with the geometry it was trained on.
pub struct MarModel {
    model: Model,
    projector: Projector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul bytes were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &MarError) -> MarStatus {
    match e {
        MarError::Geometry(_) | MarError::Config(_) | MarError::Spectrum(_) | MarError::Unit { .. } => {
            MarStatus::InvalidArgument
        }
        MarError::Shape { .. } => MarStatus::BadLength,
        MarError::Io { .. } => MarStatus::Io,
        MarError::Divergence(_) => MarStatus::Divergence,
        _ => MarStatus::Data,
    }
}

/// Failure carried out of an FFI body.
struct Fail(MarStatus, String);

impl From<MarError> for Fail {
    fn from(e: MarError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MarStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal error".into());
            MarStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(MarStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, expected: usize, name: &str) -> Result<&'a [T], Fail> {
    non_null(p, name)?;
    if len != expected {
        return Err(Fail(
            MarStatus::BadLength,
            format!("{name} has length {len}, expected {expected}"),
        ));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, expected: usize, name: &str) -> Result<&'a mut [T], Fail> {
    non_null(p, name)?;
    if len != expected {
        return Err(Fail(
            MarStatus::BadLength,
            format!("{name} has length {len}, expected {expected}"),
        ));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn geometry<'a>(g: *const MarGeometry) -> Result<&'a MarGeometry, Fail> {
    non_null(g, "geometry")?;
    Ok(&*g)
}

fn sino_len(p: &Projector) -> usize {
    p.geometry().fan_beam.len()
}

fn image_len(p: &Projector) -> usize {
    p.geometry().grid.len()
}

/// Message of the last failed call on this thread, or null. The string stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Desk-scale geometry for an `n x n` grid of 1 mm pixels.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mar_geometry_new_toy(n: usize, out: *mut *mut MarGeometry) -> MarStatus {
    guard(|| {
        non_null(out, "out")?;
        let g = toy_geometry(n)?;
        let handle = Box::new(MarGeometry {
            projector: Projector::new(&g),
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Release a geometry handle. Null is ignored.
///
/// # Safety
/// `g` must come from [`mar_geometry_new_toy`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mar_geometry_free(g: *mut MarGeometry) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Image rows and columns, sinogram views and bins. Null outputs are skipped.
///
/// # Safety
/// `g` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mar_geometry_dims(
    g: *const MarGeometry,
    height: *mut usize,
    width: *mut usize,
    num_views: *mut usize,
    num_bins: *mut usize,
) -> MarStatus {
    guard(|| {
        let geom = geometry(g)?.projector.geometry();
        for (p, v) in [
            (height, geom.grid.height),
            (width, geom.grid.width),
            (num_views, geom.fan_beam.num_views),
            (num_bins, geom.fan_beam.num_bins),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Line integrals of an attenuation image (mm^-1).
///
/// # Safety
/// `g` must be a live handle and the buffers must hold the given lengths.
#[no_mangle]
pub unsafe extern "C" fn mar_forward_project(
    g: *const MarGeometry,
    mu: *const f64,
    mu_len: usize,
    sino_out: *mut f64,
    sino_len_out: usize,
) -> MarStatus {
    guard(|| {
        let p = &geometry(g)?.projector;
        let x = input(mu, mu_len, image_len(p), "mu")?;
        let out = output(sino_out, sino_len_out, sino_len(p), "sino_out")?;
        let s = p.forward_project(&Image::new(p.geometry().grid, Unit::Mu, x.to_vec())?)?;
        out.copy_from_slice(&s.values);
        Ok(())
    })
}

/// Filtered backprojection; the output is attenuation in mm^-1.
///
/// # Safety
/// `g` must be a live handle and the buffers must hold the given lengths.
#[no_mangle]
pub unsafe extern "C" fn mar_fbp(
    g: *const MarGeometry,
    sino: *const f64,
    sino_len_in: usize,
    mu_out: *mut f64,
    mu_len: usize,
) -> MarStatus {
    guard(|| {
        let p = &geometry(g)?.projector;
        let s = sinogram(p, sino, sino_len_in)?;
        let out = output(mu_out, mu_len, image_len(p), "mu_out")?;
        out.copy_from_slice(&p.fbp(&s)?.values);
        Ok(())
    })
}

unsafe fn sinogram(p: &Projector, sino: *const f64, len: usize) -> Result<Sinogram, Fail> {
    let values = input(sino, len, sino_len(p), "sino")?;
    let fan = &p.geometry().fan_beam;
    Ok(Sinogram::new(fan.num_views, fan.num_bins, values.to_vec())?)
}

/// Detector bins whose rays cross a metal pixel.
///
/// # Safety
/// `g` must be a live handle and the buffers must hold the given lengths.
#[no_mangle]
pub unsafe extern "C" fn mar_metal_trace(
    g: *const MarGeometry,
    mask: *const u8,
    mask_len: usize,
    trace_out: *mut u8,
    trace_len: usize,
) -> MarStatus {
    guard(|| {
        let p = &geometry(g)?.projector;
        let m = input(mask, mask_len, image_len(p), "mask")?;
        let out = output(trace_out, trace_len, sino_len(p), "trace_out")?;
        let m = MetalMask::new(p.geometry().grid, m.iter().map(|&v| v != 0).collect());
        let tr = metal_trace(&m, p.geometry())?;
        for (o, &t) in out.iter_mut().zip(&tr.mask) {
            *o = t as u8;
        }
        Ok(())
    })
}

/// Replace the traced bins of each view by linear interpolation between the
/// nearest untraced neighbours.
///
/// # Safety
/// `g` must be a live handle and the buffers must hold the given lengths.
#[no_mangle]
pub unsafe extern "C" fn mar_li_complete(
    g: *const MarGeometry,
    sino: *const f64,
    trace: *const u8,
    len: usize,
    sino_out: *mut f64,
    out_len: usize,
) -> MarStatus {
    guard(|| {
        let p = &geometry(g)?.projector;
        let s = sinogram(p, sino, len)?;
        let t = input(trace, len, sino_len(p), "trace")?;
        let out = output(sino_out, out_len, sino_len(p), "sino_out")?;
        let fan = &p.geometry().fan_beam;
        let tr = MetalTrace::new(fan.num_views, fan.num_bins, t.iter().map(|&v| v != 0).collect())?;
        out.copy_from_slice(&li_complete(&s, &tr)?.values);
        Ok(())
    })
}

/// Load a trained checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mar_model_load(path: *const c_char, out: *mut *mut MarModel) -> MarStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(MarStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let model = Model::load(Path::new(path))?;
        let projector = Projector::new(&model.spec.geometry()?);
        *out = Box::into_raw(Box::new(MarModel { model, projector }));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `m` must come from [`mar_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mar_model_free(m: *mut MarModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// New handle for the geometry the model was trained on.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mar_model_geometry(m: *const MarModel, out: *mut *mut MarGeometry) -> MarStatus {
    guard(|| {
        non_null(m, "model")?;
        non_null(out, "out")?;
        let projector = (*m).projector.clone();
        *out = Box::into_raw(Box::new(MarGeometry { projector }));
        Ok(())
    })
}

/// Correct a metal-corrupted sinogram: segment metal above `threshold_hu`,
/// build its trace, complete it with the model and reconstruct. Writes the
/// corrected image in HU, and the metal mask when `mask_out` is non-null.
///
/// # Safety
/// `m` must be a live handle and the buffers must hold the given lengths.
#[no_mangle]
pub unsafe extern "C" fn mar_model_correct(
    m: *const MarModel,
    sino: *const f64,
    sino_len_in: usize,
    threshold_hu: f64,
    image_out: *mut f64,
    image_len_out: usize,
    mask_out: *mut u8,
) -> MarStatus {
    guard(|| {
        non_null(m, "model")?;
        let m = &*m;
        let p = &m.projector;
        let s = sinogram(p, sino, sino_len_in)?;
        let out = output(image_out, image_len_out, image_len(p), "image_out")?;
        let r = correct_scan(&m.model, &s, threshold_hu, p)?;
        out.copy_from_slice(&r.x_out.values);
        if !mask_out.is_null() {
            let mo = slice::from_raw_parts_mut(mask_out, image_len(p));
            for (o, &v) in mo.iter_mut().zip(&r.mask.mask) {
                *o = v as u8;
            }
        }
        Ok(())
    })
}
