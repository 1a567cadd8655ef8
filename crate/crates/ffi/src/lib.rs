//! C ABI over the splatex library. Objects cross the boundary as opaque
//! handles that the caller releases with the matching `*_free`. Every
//! fallible call returns a `SplatexStatus`; the message of the last failure
//! on the calling thread is available from `splatex_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use splatex::avatar::{expression_transfer, interpolate, GemModel};
use splatex::image::RgbImage;
use splatex::math::{Camera, CameraIntrinsics, RigidPose, UnitQuaternion, Vec3};
use splatex::render::{image_metrics, render, RenderSettings};
use splatex::texture::{GaussianTexture, GAUSSIAN_CHANNELS};
use splatex::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplatexStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    LayoutMismatch = 6,
    Numeric = 7,
    Panic = 8,
}

/// Gaussian texture handle.
pub struct SplatexTexture(GaussianTexture);

/// Linear avatar model handle.
pub struct SplatexGem(GemModel);

/// Pinhole camera; the pose maps world to camera coordinates, quaternion
/// `(w, x, y, z)`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SplatexCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SplatexMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub l2: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SplatexStatus {
    match e {
        Error::Config(_) | Error::Json(_) => SplatexStatus::Config,
        Error::Io(_) => SplatexStatus::Io,
        Error::Format { .. } => SplatexStatus::Format,
        Error::LayoutMismatch(_) | Error::DimensionMismatch(_) | Error::TopologyMismatch { .. } => {
            SplatexStatus::LayoutMismatch
        }
        Error::NonFinite(_) | Error::Degenerate(_) | Error::DegenerateTransform(_) => {
            SplatexStatus::Numeric
        }
        _ => SplatexStatus::InvalidArgument,
    }
}

struct Fail(SplatexStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SplatexStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SplatexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SplatexStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SplatexStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SplatexStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn texture_ref<'a>(t: *const SplatexTexture) -> Result<&'a GaussianTexture, Fail> {
    t.as_ref().map(|t| &t.0).ok_or_else(|| null("texture"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn splatex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn splatex_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Runs the command-line interface with `argc` arguments (excluding the
/// program name) and returns its exit code.
///
/// # Safety
/// `argv` must point to `argc` valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn splatex_run_cli(argc: c_int, argv: *const *const c_char) -> c_int {
    let mut args = vec!["splatex".to_string()];
    if argc > 0 {
        if argv.is_null() {
            set_error("argv is null");
            return 2;
        }
        for i in 0..argc as usize {
            let p = *argv.add(i);
            if p.is_null() {
                set_error("argument is null");
                return 2;
            }
            args.push(CStr::from_ptr(p).to_string_lossy().into_owned());
        }
    }
    catch_unwind(|| splatex::cli::run(args)).unwrap_or_else(|_| {
        set_error("internal panic");
        4
    })
}

/// Loads a texture written by the library (`gaussians.bin` and friends).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_load(
    path: *const c_char,
    out: *mut *mut SplatexTexture,
) -> SplatexStatus {
    guard(|| {
        let g = GaussianTexture::load(path_arg(path)?)?;
        put(out, SplatexTexture(g))
    })
}

/// # Safety
/// `texture` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_free(texture: *mut SplatexTexture) {
    if !texture.is_null() {
        drop(Box::from_raw(texture));
    }
}

/// # Safety
/// `texture` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_save(
    texture: *const SplatexTexture,
    path: *const c_char,
) -> SplatexStatus {
    guard(|| Ok(texture_ref(texture)?.save(path_arg(path)?)?))
}

/// Writes the valid texels as a binary splat PLY.
///
/// # Safety
/// `texture` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_save_ply(
    texture: *const SplatexTexture,
    path: *const c_char,
) -> SplatexStatus {
    guard(|| {
        Ok(splatex::ply::save_ply(
            texture_ref(texture)?,
            path_arg(path)?,
        )?)
    })
}

/// Grid size and valid-texel count.
///
/// # Safety
/// `texture` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_info(
    texture: *const SplatexTexture,
    height: *mut u32,
    width: *mut u32,
    valid_count: *mut u32,
) -> SplatexStatus {
    guard(|| {
        let g = texture_ref(texture)?;
        if let Some(h) = height.as_mut() {
            *h = g.height as u32;
        }
        if let Some(w) = width.as_mut() {
            *w = g.width as u32;
        }
        if let Some(n) = valid_count.as_mut() {
            *n = g.valid_count() as u32;
        }
        Ok(())
    })
}

/// The 14 channels of texel `(i, j)`: colour, opacity, position, scale,
/// rotation `(w, x, y, z)`.
///
/// # Safety
/// `texture` must be a live handle, `channels` must hold 14 doubles and
/// `valid` may be null.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_texel(
    texture: *const SplatexTexture,
    i: u32,
    j: u32,
    channels: *mut f64,
    valid: *mut bool,
) -> SplatexStatus {
    guard(|| {
        let g = texture_ref(texture)?;
        let (i, j) = (i as usize, j as usize);
        if i >= g.height || j >= g.width {
            return Err(Fail(
                SplatexStatus::InvalidArgument,
                format!("texel ({i}, {j}) outside the grid"),
            ));
        }
        if channels.is_null() {
            return Err(null("channels"));
        }
        let t = g.idx(i, j);
        std::slice::from_raw_parts_mut(channels, GAUSSIAN_CHANNELS)
            .copy_from_slice(&g.texels[t].to_channels());
        if let Some(v) = valid.as_mut() {
            *v = g.valid[t];
        }
        Ok(())
    })
}

/// Blend `a → b` by `gamma ∈ [0, 1]` into a new texture.
///
/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_interpolate(
    a: *const SplatexTexture,
    b: *const SplatexTexture,
    gamma: f64,
    out: *mut *mut SplatexTexture,
) -> SplatexStatus {
    guard(|| {
        let g = interpolate(texture_ref(a)?, texture_ref(b)?, gamma)?;
        put(out, SplatexTexture(g))
    })
}

/// Adds the `target_expr − target_neutral` residual to `source_neutral`.
///
/// # Safety
/// All inputs must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splatex_texture_transfer(
    source_neutral: *const SplatexTexture,
    target_neutral: *const SplatexTexture,
    target_expr: *const SplatexTexture,
    out: *mut *mut SplatexTexture,
) -> SplatexStatus {
    guard(|| {
        let g = expression_transfer(
            texture_ref(source_neutral)?,
            texture_ref(target_neutral)?,
            texture_ref(target_expr)?,
        )?;
        put(out, SplatexTexture(g))
    })
}

fn camera_of(c: &SplatexCamera) -> Result<Camera, Fail> {
    let intrinsics = CameraIntrinsics {
        fx: c.fx,
        fy: c.fy,
        cx: c.cx,
        cy: c.cy,
        width: c.width as usize,
        height: c.height as usize,
    };
    intrinsics.validate()?;
    let [w, x, y, z] = c.rotation;
    let pose = RigidPose::new(
        UnitQuaternion::new_normalize(w, x, y, z),
        Vec3::from(c.translation),
    );
    Ok(Camera::new(intrinsics, pose))
}

/// Renders `texture` over a black background into `rgb`, which must hold
/// `3 · width · height` doubles in row-major interleaved order.
///
/// # Safety
/// `texture` must be a live handle, `camera` readable, and `rgb` writable
/// for the full image.
#[no_mangle]
pub unsafe extern "C" fn splatex_render(
    texture: *const SplatexTexture,
    camera: *const SplatexCamera,
    rgb: *mut f64,
) -> SplatexStatus {
    guard(|| {
        let g = texture_ref(texture)?;
        let cam = camera_of(camera.as_ref().ok_or_else(|| null("camera"))?)?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let img = render(g, &cam, &RenderSettings::default());
        std::slice::from_raw_parts_mut(rgb, img.data.len()).copy_from_slice(&img.data);
        Ok(())
    })
}

/// PSNR (dB, capped at 99), SSIM, L1 and L2 between two interleaved RGB
/// images of `width × height` pixels with values in `[0, 1]`.
///
/// # Safety
/// `a` and `b` must each hold `3 · width · height` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splatex_image_metrics(
    a: *const f64,
    b: *const f64,
    width: u32,
    height: u32,
    out: *mut SplatexMetrics,
) -> SplatexStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("image or output"));
        }
        let (w, h) = (width as usize, height as usize);
        let image = |p: *const f64| RgbImage {
            width: w,
            height: h,
            data: std::slice::from_raw_parts(p, 3 * w * h).to_vec(),
        };
        let m = image_metrics(&image(a), &image(b))?;
        *out = SplatexMetrics {
            psnr: m.psnr,
            ssim: m.ssim,
            l1: m.l1,
            l2: m.l2,
        };
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splatex_gem_load(
    path: *const c_char,
    out: *mut *mut SplatexGem,
) -> SplatexStatus {
    guard(|| {
        let m = GemModel::load(path_arg(path)?)?;
        put(out, SplatexGem(m))
    })
}

/// # Safety
/// `gem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn splatex_gem_free(gem: *mut SplatexGem) {
    if !gem.is_null() {
        drop(Box::from_raw(gem));
    }
}

/// Number of components, or 0 for a null handle.
///
/// # Safety
/// `gem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn splatex_gem_components(gem: *const SplatexGem) -> u32 {
    gem.as_ref().map_or(0, |g| g.0.k() as u32)
}

/// Texture for `k` coefficients (`k` must equal the component count).
///
/// # Safety
/// `gem` must be a live handle, `coefficients` must hold `k` doubles and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn splatex_gem_reconstruct(
    gem: *const SplatexGem,
    coefficients: *const f64,
    k: u32,
    out: *mut *mut SplatexTexture,
) -> SplatexStatus {
    guard(|| {
        let m = &gem.as_ref().ok_or_else(|| null("gem"))?.0;
        let coeffs: &[f64] = if k == 0 {
            &[]
        } else if coefficients.is_null() {
            return Err(null("coefficients"));
        } else {
            std::slice::from_raw_parts(coefficients, k as usize)
        };
        put(out, SplatexTexture(m.reconstruct(coeffs)?))
    })
}

/// Least-squares coefficients of `texture`, written to `coefficients`
/// (`k` doubles, equal to the component count).
///
/// # Safety
/// `gem` and `texture` must be live handles; `coefficients` writable for `k`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn splatex_gem_fit(
    gem: *const SplatexGem,
    texture: *const SplatexTexture,
    coefficients: *mut f64,
    k: u32,
) -> SplatexStatus {
    guard(|| {
        let m = &gem.as_ref().ok_or_else(|| null("gem"))?.0;
        if k as usize != m.k() {
            return Err(Fail(
                SplatexStatus::InvalidArgument,
                format!("{k} slots for {} components", m.k()),
            ));
        }
        let fit = m.fit_coefficients(texture_ref(texture)?)?;
        if k > 0 {
            if coefficients.is_null() {
                return Err(null("coefficients"));
            }
            std::slice::from_raw_parts_mut(coefficients, fit.len()).copy_from_slice(&fit);
        }
        Ok(())
    })
}
