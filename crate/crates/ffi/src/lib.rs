//! C ABI for the fusion engine: opaque handles, integer status codes and a
//! thread-local error message. All buffers are row-major `float` arrays owned
//! by the caller; the library never retains pointers past a call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::{Array3, Array4, Axis};

use thermofuse::dataset::patches::upsample3;
use thermofuse::model::checkpoint::{self, Checkpoint};
use thermofuse::model::generator::{generator_forward, GeneratorInputs};
use thermofuse::metrics::evaluate_against_reference;
use thermofuse::raster::{GridSpec, Raster};

/// Call status. Anything other than `Ok` leaves a message retrievable through
/// `tf_last_error_message`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    /// A pointer argument was null or a size argument inconsistent.
    InvalidArgument = 1,
    /// File missing or unreadable.
    Io = 2,
    /// The computation itself failed (shape mismatch, undefined metric, ...).
    Failed = 3,
    /// A panic was caught at the boundary.
    Internal = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque fusion engine: a loaded checkpoint (generator parameters, model
/// configuration and normalization constants).
pub struct TfEngine {
    checkpoint: Checkpoint,
}

/// Evaluation results of `tf_evaluate`; all values in degrees Celsius based
/// units. `psnr` is `INFINITY` for an exact match.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TfMetrics {
    pub rmse: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub sam: f64,
    pub cc: f64,
    pub ergas: f64,
    pub ms_ssim: f64,
}

fn guard<F: FnOnce() -> TfStatus>(f: F) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic at the FFI boundary".to_string());
            set_error(&msg);
            TfStatus::Internal
        }
    }
}

/// Load a checkpoint file into a new engine. On success `*out` owns the
/// engine; release it with `tf_engine_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_engine_load(path: *const c_char, out: *mut *mut TfEngine) -> TfStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer argument");
            return TfStatus::InvalidArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return TfStatus::InvalidArgument;
            }
        };
        match checkpoint::load(Path::new(path)) {
            Ok(checkpoint) => {
                let engine = Box::new(TfEngine { checkpoint });
                unsafe { *out = Box::into_raw(engine) };
                TfStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                TfStatus::Io
            }
        }
    })
}

/// Release an engine created by `tf_engine_load`. A null pointer is ignored.
///
/// # Safety
/// `engine` must be null or a pointer returned by `tf_engine_load` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn tf_engine_free(engine: *mut TfEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

/// Side length (pixels) of the fine-grid patches the engine consumes.
///
/// # Safety
/// `engine` must be a live engine pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_engine_patch_size(engine: *const TfEngine) -> usize {
    if engine.is_null() {
        return 0;
    }
    unsafe { &*engine }.checkpoint.generator_config.base_size
}

unsafe fn slice_arg<'a>(ptr: *const f32, len: usize) -> Option<&'a [f32]> {
    if ptr.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(ptr, len) })
    }
}

/// One fused patch. Buffer layout (row-major, channel-major):
///
/// * `fine_indices` — `3 * s * s` index values in `[-1, 1]` (NDVI, NDBI, NDWI)
///   on the fine grid at the reference date,
/// * `mid_indices` — `3 * (s/3) * (s/3)` index values on the mid grid,
/// * `mid_lst` — `(s/3) * (s/3)` Kelvin values on the mid grid,
/// * `coarse_lst_t1`, `coarse_lst_t2` — `s * s` Kelvin values of the coarse
///   observation resampled onto the fine patch grid,
/// * `out` — `s * s` Kelvin values, written on success,
///
/// where `s = tf_engine_patch_size(engine)`.
///
/// # Safety
/// All pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn tf_engine_infer_patch(
    engine: *const TfEngine,
    fine_indices: *const f32,
    mid_indices: *const f32,
    mid_lst: *const f32,
    coarse_lst_t1: *const f32,
    coarse_lst_t2: *const f32,
    out: *mut f32,
) -> TfStatus {
    guard(|| {
        if engine.is_null() || out.is_null() {
            set_error("null pointer argument");
            return TfStatus::InvalidArgument;
        }
        let engine = unsafe { &*engine };
        let cfg = &engine.checkpoint.generator_config;
        let range = engine.checkpoint.normalization;
        let s = cfg.base_size;
        let m = s / 3;
        let (Some(fine_idx), Some(mid_idx), Some(mid_lst), Some(c1), Some(c2)) = (unsafe {
            (
                slice_arg(fine_indices, 3 * s * s),
                slice_arg(mid_indices, 3 * m * m),
                slice_arg(mid_lst, m * m),
                slice_arg(coarse_lst_t1, s * s),
                slice_arg(coarse_lst_t2, s * s),
            )
        }) else {
            set_error("null buffer argument");
            return TfStatus::InvalidArgument;
        };

        let to4 = |data: &[f32], c: usize, side: usize| -> Array4<f32> {
            Array4::from_shape_vec((1, c, side, side), data.to_vec()).expect("length checked")
        };
        let normalize = |a: Array4<f32>| a.mapv(|v| range.normalize(v as f64) as f32);
        let up3 = |a: Array4<f32>| -> Array4<f32> {
            let one = a.index_axis(Axis(0), 0).to_owned();
            upsample3(&one).insert_axis(Axis(0))
        };

        let inputs = GeneratorInputs {
            fine_indices_t1: to4(fine_idx, 3, s),
            mid_indices_t1: up3(to4(mid_idx, 3, m)),
            mid_lst_t1: up3(normalize(to4(mid_lst, 1, m))),
            coarse_lst_t1: normalize(to4(c1, 1, s)),
            coarse_lst_t2: normalize(to4(c2, 1, s)),
        };
        match generator_forward(&engine.checkpoint.generator, cfg, &inputs, &range) {
            Ok(kelvin) => {
                let dst = unsafe { std::slice::from_raw_parts_mut(out, s * s) };
                for (d, v) in dst.iter_mut().zip(kelvin.iter()) {
                    *d = *v;
                }
                TfStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                TfStatus::Failed
            }
        }
    })
}

/// Evaluate a fine-grid Kelvin prediction against a mid-grid Kelvin reference
/// (the reference covers the same extent with pixels three times larger). The
/// prediction is pooled with 3x3 block means and both inputs are converted to
/// Celsius before the metrics are computed.
///
/// # Safety
/// `pred` must hold `height * width` values, `reference`
/// `(height/3) * (width/3)` values, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_evaluate(
    pred: *const f32,
    height: usize,
    width: usize,
    reference: *const f32,
    out: *mut TfMetrics,
) -> TfStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return TfStatus::InvalidArgument;
        }
        if height % 3 != 0 || width % 3 != 0 || height == 0 || width == 0 {
            set_error("prediction dimensions must be positive multiples of 3");
            return TfStatus::InvalidArgument;
        }
        let (Some(pred), Some(reference)) = (unsafe {
            (
                slice_arg(pred, height * width),
                slice_arg(reference, (height / 3) * (width / 3)),
            )
        }) else {
            set_error("null buffer argument");
            return TfStatus::InvalidArgument;
        };
        let run = || -> thermofuse::Result<TfMetrics> {
            let fine_grid = GridSpec::new(width, height, 10.0, 0.0, height as f64 * 10.0, "local")?;
            let mid_grid = fine_grid.coarsen(3)?;
            let p = Raster::from_values(fine_grid, 1, pred.to_vec())?;
            let r = Raster::from_values(mid_grid, 1, reference.to_vec())?;
            let m = evaluate_against_reference(&p, &r)?;
            Ok(TfMetrics {
                rmse: m.rmse,
                ssim: m.ssim,
                psnr: m.psnr,
                sam: m.sam,
                cc: m.cc,
                ergas: m.ergas,
                ms_ssim: m.ms_ssim,
            })
        };
        match run() {
            Ok(metrics) => {
                unsafe { *out = metrics };
                TfStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                TfStatus::Failed
            }
        }
    })
}

/// Non-overlapping 3x3 block means of a fine Kelvin map; `out` receives
/// `(height/3) * (width/3)` values.
///
/// # Safety
/// `input` must hold `height * width` values and `out` the pooled count.
#[no_mangle]
pub unsafe extern "C" fn tf_pool3(
    input: *const f32,
    height: usize,
    width: usize,
    out: *mut f32,
) -> TfStatus {
    guard(|| {
        if height % 3 != 0 || width % 3 != 0 || height == 0 || width == 0 {
            set_error("dimensions must be positive multiples of 3");
            return TfStatus::InvalidArgument;
        }
        let (Some(input),) = (unsafe { (slice_arg(input, height * width),) }) else {
            set_error("null buffer argument");
            return TfStatus::InvalidArgument;
        };
        if out.is_null() {
            set_error("null output pointer");
            return TfStatus::InvalidArgument;
        }
        let arr = Array3::from_shape_vec((1, height, width), input.to_vec()).expect("checked");
        match thermofuse::training::pool_array3(&arr) {
            Ok(pooled) => {
                let dst =
                    unsafe { std::slice::from_raw_parts_mut(out, (height / 3) * (width / 3)) };
                for (d, v) in dst.iter_mut().zip(pooled.iter()) {
                    *d = *v;
                }
                TfStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                TfStatus::Failed
            }
        }
    })
}
