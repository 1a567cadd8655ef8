use std::ffi::{CStr, CString};
use std::ptr;

use splatex::texture::GaussianTexture;
use splatex_ffi::*;

fn texture(h: usize, w: usize, x: f64) -> GaussianTexture {
    let mut g = GaussianTexture::new(h, w);
    for (n, t) in g.texels.iter_mut().enumerate() {
        t.position = [x + 0.01 * (n % w) as f64, 0.01 * (n / w) as f64, 0.5];
        t.opacity = 0.8;
        t.color = [0.2, 0.4, 0.6];
        t.scale = [0.01; 3];
    }
    g.valid.fill(true);
    g.valid[0] = false;
    g
}

fn saved(dir: &std::path::Path, name: &str, g: &GaussianTexture) -> CString {
    let p = dir.join(name);
    g.save(&p).unwrap();
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(splatex_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn texture_round_trip_and_interpolation() {
    let dir = tempfile::tempdir().unwrap();
    let (ga, gb) = (texture(3, 4, 0.0), texture(3, 4, 0.1));
    let (pa, pb) = (
        saved(dir.path(), "a.bin", &ga),
        saved(dir.path(), "b.bin", &gb),
    );
    unsafe {
        let (mut a, mut b, mut m) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(splatex_texture_load(pa.as_ptr(), &mut a), SplatexStatus::Ok);
        assert_eq!(splatex_texture_load(pb.as_ptr(), &mut b), SplatexStatus::Ok);
        let (mut h, mut w, mut n) = (0, 0, 0);
        assert_eq!(
            splatex_texture_info(a, &mut h, &mut w, &mut n),
            SplatexStatus::Ok
        );
        assert_eq!((h, w, n), (3, 4, 11));
        assert_eq!(
            splatex_texture_interpolate(a, b, 0.5, &mut m),
            SplatexStatus::Ok
        );
        let mut ch = [0.0; 14];
        let mut valid = false;
        assert_eq!(
            splatex_texture_texel(m, 1, 2, ch.as_mut_ptr(), &mut valid),
            SplatexStatus::Ok
        );
        assert!(valid);
        // Files store f32.
        let expect = 0.5 * (ga.texels[6].position[0] + gb.texels[6].position[0]);
        assert!((ch[4] - expect).abs() < 1e-7);
        assert_eq!(
            splatex_texture_texel(m, 3, 0, ch.as_mut_ptr(), ptr::null_mut()),
            SplatexStatus::InvalidArgument
        );
        assert!(last_error().contains("outside"));
        let out = CString::new(dir.path().join("m.ply").to_str().unwrap()).unwrap();
        assert_eq!(splatex_texture_save_ply(m, out.as_ptr()), SplatexStatus::Ok);
        assert!(last_error().is_empty());
        splatex_texture_free(a);
        splatex_texture_free(b);
        splatex_texture_free(m);
        splatex_texture_free(ptr::null_mut());
    }
}

#[test]
fn errors_and_null_handles() {
    unsafe {
        let mut t = ptr::null_mut();
        let missing = CString::new("/nonexistent/texture.bin").unwrap();
        assert_eq!(
            splatex_texture_load(missing.as_ptr(), &mut t),
            SplatexStatus::Io
        );
        assert!(t.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            splatex_texture_load(ptr::null(), &mut t),
            SplatexStatus::NullPointer
        );
        let (mut h, mut w) = (0, 0);
        assert_eq!(
            splatex_texture_info(ptr::null(), &mut h, &mut w, ptr::null_mut()),
            SplatexStatus::NullPointer
        );
        assert_eq!(splatex_gem_components(ptr::null()), 0);
        let v = CStr::from_ptr(splatex_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn render_and_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let p = saved(dir.path(), "a.bin", &texture(3, 4, -0.01));
    let cam = SplatexCamera {
        fx: 40.0,
        fy: 40.0,
        cx: 8.0,
        cy: 8.0,
        width: 16,
        height: 16,
        rotation: [1.0, 0.0, 0.0, 0.0],
        translation: [0.0; 3],
    };
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(splatex_texture_load(p.as_ptr(), &mut t), SplatexStatus::Ok);
        let mut img = vec![0.0; 3 * 16 * 16];
        assert_eq!(splatex_render(t, &cam, img.as_mut_ptr()), SplatexStatus::Ok);
        assert!(img.iter().any(|v| *v > 0.0));
        let mut m = SplatexMetrics::default();
        assert_eq!(
            splatex_image_metrics(img.as_ptr(), img.as_ptr(), 16, 16, &mut m),
            SplatexStatus::Ok
        );
        assert_eq!((m.psnr, m.ssim, m.l1, m.l2), (99.0, 1.0, 0.0, 0.0));
        let bad = SplatexCamera { width: 0, ..cam };
        assert_ne!(splatex_render(t, &bad, img.as_mut_ptr()), SplatexStatus::Ok);
        splatex_texture_free(t);
    }
}

#[test]
fn gem_fit_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<GaussianTexture> = (0..4)
        .map(|k| texture(2, 3, 0.02 * k as f64 * k as f64))
        .collect();
    let frames: Vec<GaussianTexture> = frames
        .into_iter()
        .enumerate()
        .map(|(k, mut g)| {
            g.texels[3].color[1] = 0.1 * (k as f64 + 1.0);
            g
        })
        .collect();
    let model = splatex::avatar::pca_fit(&frames, 2, None).unwrap();
    let path = dir.path().join("gem.bin");
    model.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut gem = ptr::null_mut();
        assert_eq!(
            splatex_gem_load(cpath.as_ptr(), &mut gem),
            SplatexStatus::Ok
        );
        assert_eq!(splatex_gem_components(gem), 2);
        let k = [0.3, -0.2];
        let mut t = ptr::null_mut();
        assert_eq!(
            splatex_gem_reconstruct(gem, k.as_ptr(), 2, &mut t),
            SplatexStatus::Ok
        );
        let mut fit = [0.0; 2];
        assert_eq!(
            splatex_gem_fit(gem, t, fit.as_mut_ptr(), 2),
            SplatexStatus::Ok
        );
        assert!(
            (fit[0] - k[0]).abs() < 1e-3 && (fit[1] - k[1]).abs() < 1e-3,
            "{fit:?}"
        );
        assert_eq!(
            splatex_gem_fit(gem, t, fit.as_mut_ptr(), 3),
            SplatexStatus::InvalidArgument
        );
        splatex_texture_free(t);
        splatex_gem_free(gem);
    }
}

#[test]
fn cli_entry_point_returns_exit_codes() {
    let args = [
        CString::new("bench-attention").unwrap(),
        CString::new("--set").unwrap(),
        CString::new("nope=1").unwrap(),
    ];
    let ptrs: Vec<*const std::ffi::c_char> = args.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(
        unsafe { splatex_run_cli(ptrs.len() as i32, ptrs.as_ptr()) },
        2
    );
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/splatex.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in [
        "splatex_texture_load",
        "splatex_render",
        "splatex_gem_fit",
        "SPLATEX_STATUS_OK",
        "splatex_run_cli",
    ] {
        assert!(text.contains(sym), "{sym} missing from the header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", header])
        .status()
    else {
        return;
    };
    assert!(status.success());
}
