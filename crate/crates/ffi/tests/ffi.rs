use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use awgunet_ffi::*;

const SMALL: &str = "variant = iii\ninput_size = 32x32\ngrowth_rate = 4\nblock_layers = 2,2,2,2\n\
                     decoder_widths = 8,8,4,4,4\nbottleneck_width = 8\nwgcam_reduction = 4\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(awgu_last_error_message()) }.to_string_lossy().into_owned()
}

fn small_model() -> *mut AwguModel {
    let cfg = CString::new(SMALL).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { awgu_model_from_config(cfg.as_ptr(), &mut m) }, AwguStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

#[test]
fn predict_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let model = small_model();
    let image: Vec<f32> = (0..2 * 3 * 32 * 32).map(|i| (i % 13) as f32 / 13.0).collect();
    let mut a = vec![0f32; 2 * 32 * 32];
    let mut b = vec![0f32; 2 * 32 * 32];
    unsafe {
        assert_eq!(awgu_model_predict(model, image.as_ptr(), 2, 3, 32, 32, a.as_mut_ptr(), a.len()), AwguStatus::Ok);
        assert_eq!(awgu_model_save(model, path.as_ptr()), AwguStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(awgu_model_load(path.as_ptr(), &mut loaded), AwguStatus::Ok);
        assert_eq!(awgu_model_predict(loaded, image.as_ptr(), 2, 3, 32, 32, b.as_mut_ptr(), b.len()), AwguStatus::Ok);
        let (mut n1, mut n2) = (0, 0);
        assert_eq!(awgu_model_param_count(model, &mut n1), AwguStatus::Ok);
        assert_eq!(awgu_model_param_count(loaded, &mut n2), AwguStatus::Ok);
        assert_eq!(n1, n2);
        awgu_model_free(loaded);
        awgu_model_free(model);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn error_codes_and_messages() {
    let model = small_model();
    let mut out = vec![0f32; 16];
    unsafe {
        assert_eq!(
            awgu_model_predict(model, out.as_ptr(), 1, 1, 4, 4, out.as_mut_ptr(), 16),
            AwguStatus::Shape
        );
        assert!(last_error().contains("expected"), "{}", last_error());
        assert_eq!(
            awgu_model_predict(model, ptr::null(), 1, 3, 32, 32, out.as_mut_ptr(), 16),
            AwguStatus::NullPointer
        );
        let bad = CString::new("variant = v\n").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(awgu_model_from_config(bad.as_ptr(), &mut m), AwguStatus::Config);
        assert!(m.is_null());
        let missing = CString::new("/nonexistent/x.ckpt").unwrap();
        assert_eq!(awgu_model_load(missing.as_ptr(), &mut m), AwguStatus::Io);
        let mut x = [1f32; 6];
        let mut y = [0f32; 6];
        assert_eq!(awgu_haar_forward(x.as_mut_ptr(), 1, 1, 2, 3, y.as_mut_ptr(), 6), AwguStatus::Shape);
        assert!(last_error().contains("pad"), "{}", last_error());
        let mut metrics = AwguMetrics::default();
        assert_eq!(
            awgu_metrics_evaluate(x.as_ptr(), y.as_ptr(), 6, 1.5, &mut metrics),
            AwguStatus::InvalidArgument
        );
        awgu_model_free(model);
    }
    // success clears the message
    let mut c = 0;
    let mut h = 0;
    let mut w = 0;
    let model = small_model();
    unsafe {
        assert_eq!(awgu_model_input_size(model, &mut c, &mut h, &mut w), AwguStatus::Ok);
        awgu_model_free(model);
    }
    assert_eq!((c, h, w), (3, 32, 32));
    assert_eq!(last_error(), "");
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ckpt");
    std::fs::write(&p, b"AWGU\x01\x00").unwrap();
    let path = CString::new(p.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { awgu_model_load(path.as_ptr(), &mut m) }, AwguStatus::Checkpoint);
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(awgu_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/awgunet.h")).unwrap();
    for f in [
        "awgu_model_from_config",
        "awgu_model_load",
        "awgu_model_save",
        "awgu_model_free",
        "awgu_model_input_size",
        "awgu_model_param_count",
        "awgu_model_predict",
        "awgu_metrics_evaluate",
        "awgu_haar_forward",
        "awgu_last_error_message",
        "awgu_version",
        "typedef struct AwguModel AwguModel",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libawgunet_ffi.a");
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(lib.is_file(), "{} not built", lib.display());
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).arg(dir.path().join("c.ckpt")).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().map(|_| cc).map_err(|_| ())
}
