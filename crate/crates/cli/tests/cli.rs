use std::path::Path;
use std::process::{Command, Output};

use mvq_core::dynamics::read_checkpoint;
use mvq_core::pipeline::{read_features, read_metrics_csv};
use mvq_core::signal::load_raw_video;

fn mvq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvq"))
        .args(args)
        .current_dir(dir)
        .env("MVQ_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path) {
    ok(&mvq(
        &[
            "synth",
            "--seed",
            "4",
            "--frames",
            "6",
            "--width",
            "12",
            "--height",
            "10",
            "--out",
            "clip.mvq",
            "--flow-out",
            "clip.mvf",
        ],
        dir,
    ));
}

#[test]
fn synth_writes_a_loadable_clip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let frames = load_raw_video(dir.path().join("clip.mvq")).unwrap();
    assert_eq!(frames.len(), 6);
    assert_eq!(
        (frames[0].width(), frames[0].height(), frames[0].channels()),
        (12, 10, 1)
    );
    assert!(dir.path().join("clip.mvf").exists());
}

#[test]
fn multilayer_training_then_feature_export() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"version": 1, "flow": "file:clip.mvf",
            "layers": [{"n": 3, "k": 3, "activation_frames": 12, "lambda_m": 1e-6},
                       {"n": 2, "k": 3, "activation_frames": 8}]}"#,
    )
    .unwrap();
    let summary = ok(&mvq(
        &[
            "run-multilayer",
            "--config",
            "run.json",
            "--video",
            "clip.mvq",
            "--out-dir",
            "out",
        ],
        dir.path(),
    ));
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed["layers"].as_array().unwrap().len(), 2);
    assert_eq!(parsed["layers"][1]["start_frame"], 12);

    let metrics =
        read_metrics_csv(&std::fs::read_to_string(dir.path().join("out/metrics_layer2.csv")).unwrap()).unwrap();
    assert_eq!(metrics.len(), 8);
    assert_eq!(metrics[0].frame, 12);
    let (shape, _) = read_checkpoint(dir.path().join("out/layer2.mvqs")).unwrap();
    assert_eq!((shape.n, shape.m), (2, 3));

    ok(&mvq(
        &[
            "export-features",
            "--checkpoints",
            "out/layer1.mvqs,out/layer2.mvqs",
            "--video",
            "clip.mvq",
            "--out",
            "f.mvqf",
        ],
        dir.path(),
    ));
    let v = read_features(dir.path().join("f.mvqf")).unwrap();
    assert_eq!((v.features, v.frames), (5, 6));
}

#[test]
fn single_layer_train_with_internal_flow() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"version": 1, "layers": [{"n": 2, "k": 3, "activation_frames": 5}, {"n": 2, "k": 3, "activation_frames": 5}]}"#,
    )
    .unwrap();
    ok(&mvq(
        &["train", "--config", "run.json", "--video", "clip.mvq", "--out-dir", "o"],
        dir.path(),
    ));
    assert!(dir.path().join("o/metrics_layer1.csv").exists());
    assert!(!dir.path().join("o/metrics_layer2.csv").exists());
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"version": 1, "layers": [], "extra": 1}"#,
    )
    .unwrap();
    let out = mvq(
        &["train", "--config", "bad.json", "--video", "clip.mvq", "--out-dir", "o"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn stability_report_classifies_presets() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["stable_real", "stable_complex", "unstable_real", "unstable_complex"] {
        let text = ok(&mvq(&["analyze-stability", "--preset", preset, "--json"], dir.path()));
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["classification"], preset);
        assert_eq!(v["coercive"], true);
        assert_eq!(v["roots"]["roots"].as_array().unwrap().len(), 4);
    }
    let v: serde_json::Value = serde_json::from_str(&ok(&mvq(
        &["analyze-stability", "--preset", "stable_real", "--json"],
        dir.path(),
    )))
    .unwrap();
    assert_eq!(v["certified"], true);
}

#[test]
fn mollifier_report_has_one_row_per_sigma() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mvq(
        &[
            "mollifier-check",
            "--m",
            "1",
            "--sigmas",
            "1,0.1,0.01,0.001",
            "--out",
            "r.csv",
        ],
        dir.path(),
    ));
    let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert!((r[2] - 1.0).abs() < 1e-8);
    }
    assert!(rows.windows(2).all(|w| w[1][4] < w[0][4]));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mvq"))
        .args(["mollifier-check"])
        .env("MVQ_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
