use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
# small model for fast runs
input_size = 32x32
growth_rate = 4
block_layers = 2,2,2,2
decoder_widths = 8,8,4,4,4
bottleneck_width = 8
wgcam_reduction = 4
max_steps = 3
epochs = 3
batch_size = 2
split_fractions = 0.5,0.25,0.25
";

fn awgunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_awgunet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn train_eval_predict_inspect_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let out = awgunet(&["train", "--config", s(&cfg), "--synthetic", "8", "--deterministic", "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.cfg", "history.csv", "steps.csv", "best.ckpt", "last.ckpt", "test_metrics.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let manifest = std::fs::read_to_string(run.join("manifest.cfg")).unwrap();
    assert!(manifest.contains("growth_rate = 4"), "{manifest}");
    assert!(manifest.contains("variant = full"), "{manifest}");
    assert_eq!(std::fs::read_to_string(run.join("steps.csv")).unwrap().lines().count(), 4);

    // the manifest is itself a valid config and reproduces the run
    let rerun = dir.path().join("rerun");
    let out = awgunet(&["train", "--config", s(&run.join("manifest.cfg")), "--deterministic", "--out", s(&rerun)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(run.join("steps.csv")).unwrap(),
        std::fs::read(rerun.join("steps.csv")).unwrap()
    );

    let data = dir.path().join("data");
    awgunet::data::write_dataset(&awgunet::data::make_synthetic_blobs(3, 32, 1), &data).unwrap();
    let ck = run.join("best.ckpt");
    let ev = dir.path().join("eval");
    let out = awgunet(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&ev)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("id,dice,iou,precision,recall\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let masks = dir.path().join("masks");
    let out = awgunet(&["predict", "--checkpoint", s(&ck), "--data", s(&data.join("images")), "--out", s(&masks)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(&masks).unwrap().count(), 3);

    let dump = dir.path().join("dump");
    let image = data.join("images/blob000.png");
    let out = awgunet(&["inspect", "--checkpoint", s(&ck), "--image", s(&image), "--out", s(&dump)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&dump)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["BOT.png", "DLS.png", "DWT-1.png", "DWT-2.png", "DWT-3.png", "ELS.png"]);
}

#[test]
fn missing_masks_directory_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    let cfg = tiny_config(dir.path());
    let out = awgunet(&["train", "--config", s(&cfg), "--data", s(dir.path()), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("masks"), "{err}");
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "growth_rat = 4\n").unwrap();
    let out = awgunet(&["train", "--config", s(&bad), "--synthetic", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("growth_rat"));

    let out = awgunet(&["train", "--synthetic", "4", "--set", "lr=-1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = awgunet(&["train", "--variant", "v", "--synthetic", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = awgunet(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("x.ckpt");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let out = awgunet(&["eval", "--checkpoint", s(&ck), "--data", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_selftest_passes_and_detects_a_broken_backward() {
    let out = awgunet(&["selftest", "--quick", "--deterministic"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS  gradient: conv2d"), "{text}");

    let out = awgunet(&["selftest", "--quick", "--corrupt-backward", "conv2d"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conv2d"));
}

#[test]
fn version_and_help_exit_0() {
    let out = awgunet(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("awgunet"));
    assert_eq!(awgunet(&["train", "--help"]).status.code(), Some(0));
}
