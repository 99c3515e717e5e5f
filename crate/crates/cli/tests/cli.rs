use std::path::Path;
use std::process::{Command, Output};

fn facepad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facepad"))
        .args(args)
        .output()
        .expect("run facepad")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_and_train(dir: &Path, seed: &str, stereo: bool) -> std::path::PathBuf {
    let data = dir.join("data");
    let mut gen = vec!["--seed", seed, "--out", p(&data), "gen-synthetic", "--n-per-class", "12"];
    if stereo {
        gen.push("--stereo");
    }
    let o = facepad(&gen);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = dir.join("model.fpb");
    let manifest = data.join("manifest.jsonl");
    let calib = data.join("calibration.json");
    let mut train = vec!["--seed", seed, "--out", p(&model), "train", "--manifest", p(&manifest)];
    if stereo {
        train.extend(["--calibration", p(&calib)]);
    }
    let o = facepad(&train);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    model
}

#[test]
fn train_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_and_train(dir.path(), "5", true);
    let manifest = dir.path().join("data/manifest.jsonl");
    let scores = dir.path().join("scores.jsonl");
    let o = facepad(&[
        "evaluate", "--manifest", p(&manifest), "--model", p(&model), "--mode", "fused", "--scores", p(&scores),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("EER"));
    let json: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(json["n_genuine"], 12);
    assert_eq!(json["eer"], 0.0);
    assert_eq!(std::fs::read_to_string(&scores).unwrap().lines().count(), 24);
}

#[test]
fn fixed_seed_runs_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = gen_and_train(a.path(), "9", false);
    let mb = gen_and_train(b.path(), "9", false);
    assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(mb).unwrap());
}

#[test]
fn texture_bundle_refuses_depth_mode() {
    let dir = tempfile::tempdir().unwrap();
    let model = gen_and_train(dir.path(), "1", false);
    let manifest = dir.path().join("data/manifest.jsonl");
    let o = facepad(&["evaluate", "--manifest", p(&manifest), "--model", p(&model), "--mode", "tfbd"]);
    assert_eq!(o.status.code(), Some(2));

    let face = dir.path().join("data/genuine_0000.png");
    let o = facepad(&["predict", "--model", p(&model), "--image", p(&face)]);
    assert!(o.status.success());
    let pred: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(pred["mode"], "spmt");
}

#[test]
fn exit_codes_separate_config_from_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let o = facepad(&["--config", p(&cfg), "anchor-scales"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, r#"{"fusion_ratio": [0.7, 0.7]}"#).unwrap();
    let o = facepad(&["--config", p(&cfg), "anchor-scales"]);
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("missing.jsonl");
    let o = facepad(&["train", "--manifest", p(&missing)]);
    assert_eq!(o.status.code(), Some(1));

    let o = facepad(&["gen-synthetic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn anchor_scales_prints_layers() {
    let o = facepad(&["anchor-scales", "--min", "0.2", "--max", "0.9", "--layers", "6"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let scales: Vec<f64> = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(scales.len(), 6);
    assert!((scales[1] - 0.34).abs() < 1e-12);
}
