//! C interface to the deepntl toolkit.
//!
//! Every fallible function returns a [`DntlStatus`]. On failure the message
//! is kept per thread and can be read with [`dntl_last_error_message`].
//! Objects are opaque handles created by `*_load`/`*_new` style functions
//! and released with the matching `*_free`. Handles are not thread-safe;
//! use each one from a single thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use deepntl::dataset::clean_viirs;
use deepntl::model::{load_checkpoint_file, ModelConfig, Params};
use deepntl::pipeline::{bilinear_upsample2x, reconstruct_year, ReconstructOptions};
use deepntl::raster::{parse_ascii_grid, read_raster_file, write_raster_file, Raster};
use deepntl::train::evaluate_pair;
use deepntl::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DntlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Numeric = 6,
    Internal = 7,
    Panic = 8,
}

impl From<&Error> for DntlStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => DntlStatus::Io,
            Error::AsciiGrid { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::Corrupt(_) => DntlStatus::Format,
            Error::Dimension(_) | Error::OutOfBounds(_) | Error::Shape { .. } => DntlStatus::Dimension,
            Error::SingularFit(_)
            | Error::InsufficientLitArea(_)
            | Error::UndefinedCorrelation(_)
            | Error::NonFiniteLoss { .. }
            | Error::Gradient(_) => DntlStatus::Numeric,
            Error::InvalidArgument(_) | Error::Empty(_) | Error::Config(_) | Error::Usage(_) => DntlStatus::InvalidArgument,
            Error::Internal(_) => DntlStatus::Internal,
        }
    }
}

/// A georeferenced single-band raster.
pub struct DntlRaster {
    inner: Raster,
}

/// A trained network loaded from a checkpoint.
pub struct DntlModel {
    params: Params<f32>,
    cfg: ModelConfig,
}

/// Agreement between a ground-truth and a predicted raster.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DntlMetrics {
    pub pearson_r: f64,
    /// Infinite when the rasters are identical.
    pub psnr: f64,
    pub ssim: f64,
    /// Pixels valid in both rasters.
    pub n: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DntlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(DntlStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DntlStatus::NullArgument, format!("{what} is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DntlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DntlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DntlStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DntlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn raster_arg<'a>(r: *const DntlRaster, what: &str) -> Result<&'a Raster, Failure> {
    r.as_ref().map(|r| &r.inner).ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(out: *mut *mut T) -> Result<&'a mut *mut T, Failure> {
    let out = out.as_mut().ok_or_else(|| null("out"))?;
    *out = ptr::null_mut();
    Ok(out)
}

fn boxed(r: Raster) -> *mut DntlRaster {
    Box::into_raw(Box::new(DntlRaster { inner: r }))
}

fn read_any(path: &Path) -> deepntl::Result<Raster> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("asc")) {
        parse_ascii_grid(&std::fs::read_to_string(path)?)
    } else {
        read_raster_file(path)
    }
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn dntl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dntl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a raster from `rows * cols` row-major values. Pixels equal to
/// `nodata` are treated as missing.
///
/// # Safety
/// `data` must point to `rows * cols` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_raster_new(
    rows: usize,
    cols: usize,
    data: *const f32,
    nodata: f32,
    out: *mut *mut DntlRaster,
) -> DntlStatus {
    guard(|| {
        let out = out_arg(out)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = rows.checked_mul(cols).ok_or_else(|| Failure(DntlStatus::InvalidArgument, "size overflow".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        let r = Raster::with_geo(rows, cols, 0.0, 0.0, 1.0, -1.0, nodata, values)?;
        *out = boxed(r);
        Ok(())
    })
}

/// Reads a raster file. Files ending in `.asc` are parsed as ASCII grids,
/// everything else as the native binary format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_raster_load(path: *const c_char, out: *mut *mut DntlRaster) -> DntlStatus {
    guard(|| {
        let out = out_arg(out)?;
        let path = path_arg(path, "path")?;
        *out = boxed(read_any(&path)?);
        Ok(())
    })
}

/// Writes a raster in the native binary format.
///
/// # Safety
/// `r` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dntl_raster_save(r: *const DntlRaster, path: *const c_char) -> DntlStatus {
    guard(|| {
        let r = raster_arg(r, "raster")?;
        write_raster_file(path_arg(path, "path")?, r)?;
        Ok(())
    })
}

/// # Safety
/// `r` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_raster_dims(r: *const DntlRaster, rows: *mut usize, cols: *mut usize) -> DntlStatus {
    guard(|| {
        let r = raster_arg(r, "raster")?;
        let (rows, cols) = (rows.as_mut().ok_or_else(|| null("rows"))?, cols.as_mut().ok_or_else(|| null("cols"))?);
        (*rows, *cols) = r.dims();
        Ok(())
    })
}

/// Row-major pixel values, owned by the handle. NULL if `r` is NULL.
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dntl_raster_data(r: *const DntlRaster) -> *const f32 {
    r.as_ref().map_or(ptr::null(), |r| r.inner.data().as_ptr())
}

/// Missing-value sentinel of the raster; NaN if `r` is NULL.
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dntl_raster_nodata(r: *const DntlRaster) -> f32 {
    r.as_ref().map_or(f32::NAN, |r| r.inner.nodata())
}

/// # Safety
/// `r` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dntl_raster_free(r: *mut DntlRaster) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Sets values below `floor` to 0 and caps values above `ceil`.
///
/// # Safety
/// `r` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_clean_viirs(r: *const DntlRaster, floor: f32, ceil: f32, out: *mut *mut DntlRaster) -> DntlStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = boxed(clean_viirs(raster_arg(r, "raster")?, floor, ceil)?);
        Ok(())
    })
}

/// Doubles the resolution by bilinear interpolation.
///
/// # Safety
/// `r` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_bilinear_upsample2x(r: *const DntlRaster, out: *mut *mut DntlRaster) -> DntlStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = boxed(bilinear_upsample2x(raster_arg(r, "raster")?));
        Ok(())
    })
}

/// Pearson r, PSNR and global SSIM of `sr` against `gt` with peak value
/// `max_val`.
///
/// # Safety
/// `gt` and `sr` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_evaluate(
    gt: *const DntlRaster,
    sr: *const DntlRaster,
    max_val: f64,
    out: *mut DntlMetrics,
) -> DntlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = evaluate_pair(raster_arg(gt, "gt")?, raster_arg(sr, "sr")?, max_val)?;
        *out = DntlMetrics {
            pearson_r: m.r,
            psnr: m.psnr,
            ssim: m.ssim,
            n: m.n as u64,
        };
        Ok(())
    })
}

/// Loads a trained network from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_model_load(path: *const c_char, out: *mut *mut DntlModel) -> DntlStatus {
    guard(|| {
        let out = out_arg(out)?;
        let (params, cfg) = load_checkpoint_file(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(DntlModel { params, cfg }));
        Ok(())
    })
}

/// DMSP tile size the network was trained on.
///
/// # Safety
/// `m` must be a live handle; `h` and `w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_model_tile_dims(m: *const DntlModel, h: *mut usize, w: *mut usize) -> DntlStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let (h, w) = (h.as_mut().ok_or_else(|| null("h"))?, w.as_mut().ok_or_else(|| null("w"))?);
        (*h, *w) = (m.cfg.h, m.cfg.w);
        Ok(())
    })
}

/// Predicts the VIIRS-like raster of the target year from the reference
/// and target DMSP rasters and the reference VIIRS raster (twice the
/// DMSP size). The output is clamped to `[0, ceil]`; with `overlap`
/// nonzero, half-tile-shifted windows are averaged.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dntl_model_reconstruct(
    m: *const DntlModel,
    dmsp_ref: *const DntlRaster,
    dmsp_tgt: *const DntlRaster,
    viirs_ref: *const DntlRaster,
    ceil: f32,
    overlap: i32,
    out: *mut *mut DntlRaster,
) -> DntlStatus {
    guard(|| {
        let out = out_arg(out)?;
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let opts = ReconstructOptions {
            ceil,
            overlap: overlap != 0,
            ..ReconstructOptions::default()
        };
        let y = reconstruct_year(
            &m.params,
            &m.cfg,
            raster_arg(dmsp_ref, "dmsp_ref")?,
            raster_arg(dmsp_tgt, "dmsp_tgt")?,
            raster_arg(viirs_ref, "viirs_ref")?,
            &opts,
        )?;
        *out = boxed(y);
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dntl_model_free(m: *mut DntlModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
