use std::ffi::{CStr, CString};
use std::ptr;

use slicegs_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sg_last_error_message()) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn volume_cloud_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut vol = ptr::null_mut();
        assert_eq!(sg_phantom_create(0, 16, 16, 20, 5, &mut vol), SgStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(sg_volume_dims(vol, dims.as_mut_ptr()), SgStatus::Ok);
        assert_eq!(dims, [16, 16, 20]);

        let vpath = cstr(dir.path().join("v.igv").to_str().unwrap());
        assert_eq!(sg_volume_save(vol, vpath.as_ptr()), SgStatus::Ok);
        let mut vol2 = ptr::null_mut();
        assert_eq!(sg_volume_load(vpath.as_ptr(), &mut vol2), SgStatus::Ok);
        let mut a = vec![0f32; 16 * 16 * 20];
        let mut b = vec![0f32; 16 * 16 * 20];
        assert_eq!(sg_volume_read(vol, a.as_mut_ptr(), a.len()), SgStatus::Ok);
        assert_eq!(sg_volume_read(vol2, b.as_mut_ptr(), b.len()), SgStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(sg_volume_read(vol, a.as_mut_ptr(), 10), SgStatus::BufferTooSmall);

        let mut cloud = ptr::null_mut();
        assert_eq!(sg_cloud_init_grid(vol, 4, &mut cloud), SgStatus::Ok);
        let mut n = 0usize;
        assert_eq!(sg_cloud_count(cloud, &mut n), SgStatus::Ok);
        assert_eq!(n, 64);

        let mut img = vec![0f32; 16 * 16];
        assert_eq!(sg_render_slice(cloud, 2, 10.5, 16, 16, 2, 0.01, img.as_mut_ptr(), img.len()), SgStatus::Ok);
        assert!(img.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
        assert!(img.iter().any(|&v| v > 0.0));
        assert_eq!(
            sg_render_slice(cloud, 7, 10.5, 16, 16, 2, 0.01, img.as_mut_ptr(), img.len()),
            SgStatus::InvalidArgument
        );
        assert_eq!(sg_render_slice(cloud, 2, 10.5, 16, 16, 2, 2.0, img.as_mut_ptr(), img.len()), SgStatus::InvalidConfig);

        let cpath = cstr(dir.path().join("c.igs").to_str().unwrap());
        assert_eq!(sg_cloud_save(cloud, cpath.as_ptr()), SgStatus::Ok);
        let mut cloud2 = ptr::null_mut();
        assert_eq!(sg_cloud_load(cpath.as_ptr(), &mut cloud2), SgStatus::Ok);
        let mut img2 = vec![0f32; 16 * 16];
        assert_eq!(sg_render_slice(cloud2, 2, 10.5, 16, 16, 2, 0.01, img2.as_mut_ptr(), img2.len()), SgStatus::Ok);
        assert_eq!(img, img2);

        sg_cloud_free(cloud);
        sg_cloud_free(cloud2);
        sg_volume_free(vol);
        sg_volume_free(vol2);
        sg_cloud_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_messages() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut vol = ptr::null_mut();
        let missing = cstr(dir.path().join("missing.igv").to_str().unwrap());
        assert_eq!(sg_volume_load(missing.as_ptr(), &mut vol), SgStatus::Io);
        assert!(last_error().contains("missing.igv"));
        assert!(vol.is_null());

        let junk = dir.path().join("junk.igs");
        std::fs::write(&junk, b"IGS1 not really").unwrap();
        let junk = cstr(junk.to_str().unwrap());
        let mut cloud = ptr::null_mut();
        assert_eq!(sg_cloud_load(junk.as_ptr(), &mut cloud), SgStatus::Format);
        assert!(last_error().contains("format error"));

        assert_eq!(sg_volume_load(ptr::null(), &mut vol), SgStatus::NullPointer);
        assert_eq!(sg_cloud_count(ptr::null(), ptr::null_mut()), SgStatus::NullPointer);
        assert_eq!(sg_phantom_create(9, 16, 16, 16, 0, &mut vol), SgStatus::InvalidArgument);
        assert_eq!(sg_phantom_create(0, 16, 16, 16, 0, &mut vol), SgStatus::Ok);
        assert_eq!(last_error(), "");
        sg_volume_free(vol);
    }
}

#[test]
fn train_and_simulate_return_json() {
    unsafe {
        let mut vol = ptr::null_mut();
        assert_eq!(sg_phantom_create(1, 16, 16, 16, 2, &mut vol), SgStatus::Ok);
        let cfg = cstr(r#"{"max_steps": 4, "grid_resolution": 4, "slices_per_step": 8, "seed": 3}"#);
        let mut cloud = ptr::null_mut();
        let mut report = ptr::null_mut();
        assert_eq!(sg_train(vol, cfg.as_ptr(), 0.1, &mut cloud, &mut report), SgStatus::Ok, "{}", last_error());
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(report).to_str().unwrap()).unwrap();
        assert_eq!(json["steps"], 4);
        sg_string_free(report);
        sg_cloud_free(cloud);

        let bad = cstr(r#"{"max_steps": "many"}"#);
        assert_eq!(sg_train(vol, bad.as_ptr(), 0.1, &mut cloud, &mut report), SgStatus::InvalidConfig);
        sg_volume_free(vol);

        let sim = cstr(r#"{"volume_size": 10, "num_gaussians": 4, "mean_range": [3, 7], "repetitions": 1, "timing_rounds": 1}"#);
        let mut out = ptr::null_mut();
        assert_eq!(sg_simulate(sim.as_ptr(), &mut out), SgStatus::Ok, "{}", last_error());
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        assert_eq!(json["aggregate"][0]["label"], "m1");
        sg_string_free(out);
    }
}

#[test]
fn header_is_generated_and_compiles_as_c() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include/slicegs.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["sg_render_slice", "sg_cloud_free", "SG_STATUS_FORMAT", "typedef struct SgCloud SgCloud"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        "#include \"slicegs.h\"\nint main(void) { SgCloud *c = 0; size_t n = 0; return sg_cloud_count(c, &n) == SG_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile as C"),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
