//! C ABI for slicegs.
//!
//! Volumes and clouds are opaque handles owned by the caller and released
//! with the matching `*_free`. Every function returns an [`SgStatus`]; on
//! failure, [`sg_last_error_message`] describes the error for the calling
//! thread. Strings returned through out-parameters are heap-allocated JSON
//! and must be released with [`sg_string_free`]. Panics never cross the
//! boundary; they surface as [`SgStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slicegs::data::{extract_slices, load_checkpoint, load_volume, make_phantom, save_checkpoint, save_volume, split_dataset};
use slicegs::data::{PhantomKind, Volume};
use slicegs::gaussian::init_grid_cloud;
use slicegs::raster::render;
use slicegs::simulation::{run_selection_benchmark, SimulationConfig};
use slicegs::training::{train, TrainConfig};
use slicegs::{Axis, Bounds, Error, GaussianCloud, InitConfig, Method, RasterSettings, SliceSpec};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    InvalidConfig = 5,
    Training = 6,
    Contract = 7,
    Degenerate = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A voxel volume with intensities in `[0, 1]`.
pub struct SgVolume {
    inner: Volume,
}

/// A Gaussian cloud.
pub struct SgCloud {
    inner: GaussianCloud,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SgStatus::Io,
            Error::Format { .. } => SgStatus::Format,
            Error::InvalidConfig(_) => SgStatus::InvalidConfig,
            Error::Training(_) => SgStatus::Training,
            Error::Contract(_) => SgStatus::Contract,
            Error::Degenerate(_) => SgStatus::Degenerate,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SgStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            SgStatus::Ok
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
            set_last_error(&format!("internal panic: {msg}"));
            SgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SgStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SgStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_json<'a>(p: *const c_char) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, "config_json").map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(SgStatus::NullPointer, format!("{name} is null")))
}

fn check_out<T>(p: *mut T) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(SgStatus::NullPointer, "output pointer is null"))
    } else {
        Ok(())
    }
}

fn axis_arg(axis: u32) -> Result<Axis, Failure> {
    Axis::ALL
        .get(axis as usize)
        .copied()
        .ok_or_else(|| fail(SgStatus::InvalidArgument, format!("axis must be 0 (x), 1 (y) or 2 (z), got {axis}")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load an IGV1 volume.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_volume_load(path: *const c_char, out: *mut *mut SgVolume) -> SgStatus {
    guard(|| {
        check_out(out)?;
        let v = load_volume(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SgVolume { inner: v }));
        Ok(())
    })
}

/// Save a volume as IGV1.
///
/// # Safety
/// `volume` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sg_volume_save(volume: *const SgVolume, path: *const c_char) -> SgStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        save_volume(&v.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Synthesize a phantom. `kind`: 0 nested ellipsoids, 1 checker shells.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_phantom_create(
    kind: u32,
    nx: usize,
    ny: usize,
    nz: usize,
    seed: u64,
    out: *mut *mut SgVolume,
) -> SgStatus {
    guard(|| {
        check_out(out)?;
        let kind = match kind {
            0 => PhantomKind::NestedEllipsoids,
            1 => PhantomKind::CheckerShells,
            k => return Err(fail(SgStatus::InvalidArgument, format!("unknown phantom kind {k}"))),
        };
        let v = make_phantom(kind, [nx, ny, nz], seed)?;
        *out = Box::into_raw(Box::new(SgVolume { inner: v }));
        Ok(())
    })
}

/// Write the volume's `[nx, ny, nz]` into `dims`.
///
/// # Safety
/// `volume` must be a live handle; `dims` must point to 3 writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn sg_volume_dims(volume: *const SgVolume, dims: *mut usize) -> SgStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        check_out(dims)?;
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&v.inner.dims);
        Ok(())
    })
}

/// Copy the voxels (x fastest) into `out`, which holds `len` floats.
///
/// # Safety
/// `volume` must be a live handle; `out` must hold `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sg_volume_read(volume: *const SgVolume, out: *mut f32, len: usize) -> SgStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        check_out(out)?;
        if len < v.inner.len() {
            return Err(fail(
                SgStatus::BufferTooSmall,
                format!("buffer holds {len} floats, volume has {}", v.inner.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, v.inner.len()).copy_from_slice(&v.inner.data);
        Ok(())
    })
}

/// # Safety
/// `volume` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_volume_free(volume: *mut SgVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// `resolution^3` Gaussians on a regular grid covering the volume.
///
/// # Safety
/// `volume` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_cloud_init_grid(
    volume: *const SgVolume,
    resolution: usize,
    out: *mut *mut SgCloud,
) -> SgStatus {
    guard(|| {
        check_out(out)?;
        let v = handle(volume, "volume")?;
        let c = init_grid_cloud(resolution, Bounds::from_dims(v.inner.dims), &InitConfig::default())?;
        *out = Box::into_raw(Box::new(SgCloud { inner: c }));
        Ok(())
    })
}

/// Load an IGS1 checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_cloud_load(path: *const c_char, out: *mut *mut SgCloud) -> SgStatus {
    guard(|| {
        check_out(out)?;
        let c = load_checkpoint(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SgCloud { inner: c }));
        Ok(())
    })
}

/// Save as IGS1 plus a `.json` sidecar.
///
/// # Safety
/// `cloud` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sg_cloud_save(cloud: *const SgCloud, path: *const c_char) -> SgStatus {
    guard(|| {
        let c = handle(cloud, "cloud")?;
        save_checkpoint(&c.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `cloud` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_cloud_count(cloud: *const SgCloud, count: *mut usize) -> SgStatus {
    guard(|| {
        let c = handle(cloud, "cloud")?;
        check_out(count)?;
        *count = c.inner.len();
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_cloud_free(cloud: *mut SgCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Render a `width x height` slice at depth `t` along `axis` (0 x, 1 y,
/// 2 z) into `out` (row-major, `len >= width * height`). Pixel `(i, j)` is
/// centered at `bounds.min + 0.5 + (i, j)` in the in-plane axes. `method`:
/// 1 fixed cube, 2 conditional box.
///
/// # Safety
/// `cloud` must be a live handle; `out` must hold `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sg_render_slice(
    cloud: *const SgCloud,
    axis: u32,
    t: f64,
    width: usize,
    height: usize,
    method: u32,
    epsilon: f64,
    out: *mut f32,
    len: usize,
) -> SgStatus {
    guard(|| {
        let c = handle(cloud, "cloud")?;
        check_out(out)?;
        let axis = axis_arg(axis)?;
        let method = match method {
            1 => Method::M1,
            2 => Method::M2,
            m => return Err(fail(SgStatus::InvalidArgument, format!("method must be 1 or 2, got {m}"))),
        };
        let need = width
            .checked_mul(height)
            .ok_or_else(|| fail(SgStatus::InvalidArgument, "image size overflows"))?;
        if len < need {
            return Err(fail(SgStatus::BufferTooSmall, format!("buffer holds {len} floats, image needs {need}")));
        }
        let b = c.inner.bounds();
        let p = axis.permutation();
        let spec = SliceSpec::new(axis, t, width, height, [b.min[p[0]] + 0.5, b.min[p[1]] + 0.5], 1.0);
        let mut settings = RasterSettings::default();
        settings.selection.method = method;
        settings.selection.epsilon = epsilon;
        let img = render(&c.inner, &spec, &settings)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (d, s) in dst.iter_mut().zip(&img.image) {
            *d = *s as f32;
        }
        Ok(())
    })
}

/// Slice `volume` along all three axes, hold out `test_fraction` of each
/// axis, and train a fresh grid cloud. `config_json` (nullable) holds any
/// training options as JSON; its `seed` also drives the split. On success
/// `out_cloud` receives the trained cloud and `out_report` the training
/// report as JSON.
///
/// # Safety
/// Pointers must be valid as documented; `config_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn sg_train(
    volume: *const SgVolume,
    config_json: *const c_char,
    test_fraction: f64,
    out_cloud: *mut *mut SgCloud,
    out_report: *mut *mut c_char,
) -> SgStatus {
    guard(|| {
        check_out(out_cloud)?;
        check_out(out_report)?;
        let v = handle(volume, "volume")?;
        let config: TrainConfig = match opt_json(config_json)? {
            Some(s) => serde_json::from_str(s)
                .map_err(|e| fail(SgStatus::InvalidConfig, format!("invalid training config: {e}")))?,
            None => TrainConfig::default(),
        };
        let dataset = split_dataset(&extract_slices(&v.inner, &Axis::ALL)?, test_fraction, config.seed)?;
        let (cloud, report) = train(&dataset, &config)?;
        let json = serde_json::to_string(&report).expect("report serializes");
        *out_report = into_c_string(json);
        *out_cloud = Box::into_raw(Box::new(SgCloud { inner: cloud }));
        Ok(())
    })
}

/// Run the candidate-selection benchmark. `config_json` may be null for
/// defaults. The report is returned as JSON in `out_report`.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn sg_simulate(config_json: *const c_char, out_report: *mut *mut c_char) -> SgStatus {
    guard(|| {
        check_out(out_report)?;
        let config: SimulationConfig = match opt_json(config_json)? {
            Some(s) => serde_json::from_str(s)
                .map_err(|e| fail(SgStatus::InvalidConfig, format!("invalid simulation config: {e}")))?,
            None => SimulationConfig::default(),
        };
        let report = run_selection_benchmark(&config)?;
        *out_report = into_c_string(serde_json::to_string(&report).expect("report serializes"));
        Ok(())
    })
}
