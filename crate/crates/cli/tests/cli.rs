//! Black-box tests of the command-line interface: determinism, exit codes,
//! report formats and the SVG overlay contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ttlift")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
    dataset: PathBuf,
}

fn fixture(n: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data_dir = root.join("data");
    run_ok(&[
        "generate",
        "--out",
        data_dir.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    Fixture {
        dataset: data_dir.join("dataset.jsonl"),
        root,
        dir,
    }
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        run_ok(&[
            "generate",
            "--out",
            out.to_str().unwrap(),
            "--n",
            "12",
            "--seed",
            "9",
        ]);
    }
    let da = std::fs::read(a.join("dataset.jsonl")).unwrap();
    let db = std::fs::read(b.join("dataset.jsonl")).unwrap();
    assert_eq!(da, db);
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    let mb = std::fs::read(b.join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn generate_rejects_zero_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let r = run(&["generate", "--out", out.to_str().unwrap(), "--n", "0"]);
    assert_eq!(r.status.code(), Some(2));

    let r = run(&[
        "generate",
        "--out",
        out.to_str().unwrap(),
        "--n",
        "2",
        "--set",
        "no_such_knob=3",
    ]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("no_such_knob"), "stderr must name the key: {err}");
}

#[test]
fn paper_preset_requires_confirmation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let r = run(&["generate", "--out", out.to_str().unwrap(), "--preset", "paper"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn eval_oracle_reports_zero_reprojection_error() {
    let f = fixture(6, 21);
    let report = f.root.join("report.csv");
    let out = run_ok(&[
        "eval",
        "--oracle",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("m2dre_px=0.0000"), "stdout: {stdout}");
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("id,n_frames,m2dre_px,spin_truth,spin_pred\n"));
    // One row per trajectory plus header and aggregate footer.
    assert_eq!(text.lines().count(), 6 + 2);
}

#[test]
fn eval_half_fps_halves_valid_frames() {
    let f = fixture(5, 33);
    let full = f.root.join("full.csv");
    let half = f.root.join("half.csv");
    run_ok(&[
        "eval",
        "--oracle",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--out",
        full.to_str().unwrap(),
    ]);
    run_ok(&[
        "eval",
        "--oracle",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--out",
        half.to_str().unwrap(),
        "--transform",
        "half-fps",
    ]);
    let parse = |p: &Path| -> Vec<usize> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };
    for (full_n, half_n) in parse(&full).iter().zip(parse(&half)) {
        assert_eq!(half_n, full_n.div_ceil(2));
    }
}

#[test]
fn eval_missing_transform_is_reproducible() {
    let f = fixture(5, 34);
    let a = f.root.join("a.csv");
    let b = f.root.join("b.csv");
    for out in [&a, &b] {
        run_ok(&[
            "eval",
            "--oracle",
            "--dataset",
            f.dataset.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--transform",
            "missing-detections",
            "--seed",
            "3",
        ]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn plot_produces_parseable_svg_with_matching_markers() {
    let f = fixture(3, 55);
    let svg_path = f.root.join("plot.svg");
    run_ok(&[
        "plot",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--index",
        "1",
        "--out",
        svg_path.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&text).expect("valid XML");

    let count_in_group = |id: &str| -> usize {
        doc.descendants()
            .filter(|n| {
                n.has_tag_name("circle")
                    && n.ancestors()
                        .any(|a| a.attribute("id") == Some(id))
            })
            .count()
    };
    let circle_centers = |id: &str| -> Vec<[f64; 2]> {
        doc.descendants()
            .filter(|n| {
                n.has_tag_name("circle")
                    && n.ancestors().any(|a| a.attribute("id") == Some(id))
            })
            .map(|n| {
                [
                    n.attribute("cx").unwrap().parse().unwrap(),
                    n.attribute("cy").unwrap().parse().unwrap(),
                ]
            })
            .collect()
    };

    // Marker counts: detections equal valid frames; keypoints 13.
    let line = std::fs::read_to_string(&f.dataset).unwrap();
    let sample: serde_json::Value =
        serde_json::from_str(line.lines().nth(1).unwrap()).unwrap();
    let n_valid = sample["ball_valid"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|v| v.as_bool().unwrap())
        .count();
    assert_eq!(count_in_group("detections"), n_valid);
    assert_eq!(count_in_group("keypoints"), 13);

    // Ground-truth mode: the predicted overlay coincides with detections.
    let det = circle_centers("detections");
    let pred = circle_centers("prediction");
    assert_eq!(det.len(), pred.len());
    for (d, p) in det.iter().zip(&pred) {
        let dist = ((d[0] - p[0]).powi(2) + (d[1] - p[1]).powi(2)).sqrt();
        assert!(dist < 0.5, "markers diverge by {dist} px");
    }
}

#[test]
fn filter_retains_identical_tracks_and_revalidates() {
    let f = fixture(4, 66);
    let out_path = f.root.join("filtered.jsonl");
    run_ok(&[
        "filter",
        "--primary",
        f.dataset.to_str().unwrap(),
        "--auxiliary",
        f.dataset.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    let orig = std::fs::read_to_string(&f.dataset).unwrap();
    let filt = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(orig.lines().count(), filt.lines().count());
    for (o, fl) in orig.lines().zip(filt.lines()) {
        let ov: serde_json::Value = serde_json::from_str(o).unwrap();
        let fv: serde_json::Value = serde_json::from_str(fl).unwrap();
        assert_eq!(ov["ball_valid"], fv["ball_valid"]);
        assert_eq!(ov["keypoints_valid"], fv["keypoints_valid"]);
    }
}

#[test]
fn calibrate_recovers_camera_and_flags_outliers() {
    let f = fixture(3, 88);
    let cam = f.root.join("camera.json");
    run_ok(&[
        "calibrate",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--index",
        "0",
        "--out",
        cam.to_str().unwrap(),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cam).unwrap()).unwrap();
    assert_eq!(v["n_inliers"], 13);
    assert!(v["table_m2dre_px"].as_f64().unwrap() < 1e-6);

    // Corrupt four keypoints: calibrate must exclude exactly those.
    let text = std::fs::read_to_string(&f.dataset).unwrap();
    let mut lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let corrupted = [0usize, 3, 7, 10];
    for &k in &corrupted {
        lines[0]["keypoints2d_px"][k][0] = serde_json::json!(
            lines[0]["keypoints2d_px"][k][0].as_f64().unwrap() + 50.0
        );
    }
    let bad_path = f.root.join("bad.jsonl");
    let joined: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    std::fs::write(&bad_path, joined.join("\n") + "\n").unwrap();
    let cam2 = f.root.join("camera2.json");
    run_ok(&[
        "calibrate",
        "--dataset",
        bad_path.to_str().unwrap(),
        "--index",
        "0",
        "--out",
        cam2.to_str().unwrap(),
        "--tau",
        "3",
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cam2).unwrap()).unwrap();
    assert_eq!(v["n_inliers"], 9);
    for (i, flag) in v["inliers"].as_array().unwrap().iter().enumerate() {
        assert_eq!(flag.as_bool().unwrap(), !corrupted.contains(&i), "keypoint {i}");
    }
}

#[test]
fn calibrate_with_too_few_keypoints_is_a_data_error() {
    let f = fixture(2, 99);
    let text = std::fs::read_to_string(&f.dataset).unwrap();
    let mut lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for k in 0..9 {
        lines[0]["keypoints2d_px"][k] = serde_json::Value::Null;
        lines[0]["keypoints_valid"][k] = serde_json::json!(false);
    }
    let path = f.root.join("sparse.jsonl");
    let joined: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    std::fs::write(&path, joined.join("\n") + "\n").unwrap();
    let r = run(&[
        "calibrate",
        "--dataset",
        path.to_str().unwrap(),
        "--index",
        "0",
        "--out",
        f.root.join("cam.json").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let r = run(&[
        "eval",
        "--oracle",
        "--dataset",
        "/nonexistent/data.jsonl",
        "--out",
        "/tmp/never.csv",
    ]);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn train_smoke_preset_runs_and_resumes_exactly() {
    let f = fixture(20, 123);
    let args_common = [
        "--set",
        "d=16",
        "--set",
        "l=6",
        "--set",
        "batch=8",
        "--set",
        "warmup_steps=4",
        "--set",
        "seed=5",
    ];

    // Full two-epoch run.
    let full_dir = f.root.join("full");
    let mut args = vec![
        "train",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--out",
        full_dir.to_str().unwrap(),
        "--set",
        "epochs=2",
    ];
    args.extend_from_slice(&args_common);
    run_ok(&args);
    let history = std::fs::read_to_string(full_dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3, "one row per epoch plus header");

    // One epoch, then resume for the second.
    let part_dir = f.root.join("part");
    let mut args = vec![
        "train",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--out",
        part_dir.to_str().unwrap(),
        "--set",
        "epochs=1",
    ];
    args.extend_from_slice(&args_common);
    run_ok(&args);
    let resume_dir = f.root.join("resumed");
    let part_ckpt = part_dir.join("checkpoint.ckpt");
    let mut args = vec![
        "train",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--out",
        resume_dir.to_str().unwrap(),
        "--resume",
        part_ckpt.to_str().unwrap(),
        "--set",
        "epochs=2",
    ];
    args.extend_from_slice(&args_common);
    run_ok(&args);

    let a = std::fs::read(full_dir.join("checkpoint.ckpt")).unwrap();
    let b = std::fs::read(resume_dir.join("checkpoint.ckpt")).unwrap();
    assert_eq!(a, b, "resumed run must reproduce the continuous run exactly");
}
