use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchkit"))
        .args(args)
        .output()
        .expect("spawn patchkit")
}

fn ok(args: &[&str]) -> Value {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON object")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn view_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/view")
}

#[test]
fn fpr95_on_separated_scores() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    fs::write(&p, "score,label\n0.9,1\n0.8,1\n0.2,0\n0.1,0\n").unwrap();
    let v = ok(&["eval", "fpr95", "--scores", s(&p)]);
    assert_eq!(v["fpr95"], 0.0);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["eval", "fpr95"]).status.code(), Some(2));
    let out = bin(&["eval", "fpr95", "--scores", "/nonexistent/s.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert!(out.stdout.is_empty());
}

#[test]
fn version_is_semver() {
    let out = bin(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let v = text.split_whitespace().last().unwrap();
    assert_eq!(v.split('.').count(), 3, "{text}");
    assert!(v.split('.').all(|p| p.parse::<u32>().is_ok()));
}

#[test]
fn smoke_pipeline_on_bundled_view() {
    let dir = tempfile::tempdir().unwrap();
    let (kps, store) = (dir.path().join("kps.csv"), dir.path().join("store"));
    let (d0, d1) = (dir.path().join("d0.emb"), dir.path().join("d1.emb"));
    let view = view_dir();
    let det = ok(&[
        "detect",
        "--input",
        s(&view),
        "--bs",
        "12",
        "--k2",
        "2",
        "--out",
        s(&kps),
    ]);
    assert!(det["keypoints"].as_u64().unwrap() > 0);
    let ext = ok(&[
        "extract",
        "--view-dir",
        s(&view),
        "--keypoints",
        s(&kps),
        "--patch-size",
        "32",
        "--out",
        s(&store),
    ]);
    assert_eq!(ext["images"], 3);
    assert!(ext["sets"].as_u64().unwrap() >= 1);
    ok(&[
        "describe",
        "--patches",
        s(&store),
        "--view-index",
        "0",
        "--out",
        s(&d0),
    ]);
    let d = ok(&[
        "describe",
        "--patches",
        s(&store),
        "--view-index",
        "2",
        "--out",
        s(&d1),
    ]);
    assert_eq!(d["dim"], 128);
    let loss = ok(&["loss", "--a", s(&d0), "--b", s(&d1)]);
    assert!(loss["total"].as_f64().unwrap().is_finite());
    let m = ok(&["eval", "matching", "--ref", s(&d0), "--tgt", s(&d1)]);
    assert!(m["map"].as_f64().unwrap() > 0.9);

    // compression needs more rows than descriptor dimensions
    let (many, store2, all) = (
        dir.path().join("many.csv"),
        dir.path().join("store2"),
        dir.path().join("all.emb"),
    );
    let sampled = ok(&[
        "detect",
        "--input",
        s(&view),
        "--mode",
        "sample",
        "--count",
        "120",
        "--min-scale",
        "10",
        "--max-scale",
        "24",
        "--out",
        s(&many),
    ]);
    assert_eq!(sampled["keypoints"], 120);
    ok(&[
        "extract",
        "--view-dir",
        s(&view),
        "--keypoints",
        s(&many),
        "--patch-size",
        "32",
        "--out",
        s(&store2),
    ]);
    let described = ok(&["describe", "--patches", s(&store2), "--out", s(&all)]);
    assert!(described["rows"].as_u64().unwrap() > 128);
    let model = dir.path().join("pca.bin");
    let fit = ok(&[
        "pca",
        "fit",
        "--in",
        s(&all),
        "--k",
        "16",
        "--out",
        s(&model),
    ]);
    assert_eq!(fit["k"], 16);
    let y = dir.path().join("y.emb");
    let applied = ok(&[
        "pca",
        "apply",
        "--model",
        s(&model),
        "--in",
        s(&all),
        "--out",
        s(&y),
    ]);
    assert_eq!(applied["dim"], 16);

    let batches = dir.path().join("batches");
    let sets = ext["sets"].as_u64().unwrap();
    if sets >= 2 {
        let v = ok(&[
            "sample",
            "--dataset",
            s(&store),
            "--batch-size",
            "4",
            "--batches",
            "3",
            "--out",
            s(&batches),
        ]);
        assert_eq!(v["patches"], 12);
        let text = fs::read_to_string(batches.join("batches.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let errors = dir.path().join("e.csv");
    fs::write(&errors, "error\n0.5\n3.0\n8.0\n").unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, format!(r#"{{"errors": "{}", "max": 4}}"#, s(&errors))).unwrap();
    let from_cfg = ok(&["--config", s(&cfg), "eval", "maa"]);
    assert_eq!(from_cfg["max_deg"], 4.0);
    let explicit = ok(&["--config", s(&cfg), "eval", "maa", "--max", "10"]);
    assert_eq!(explicit["max_deg"], 10.0);
    // thresholds 1..=10: 0.5 under all, 3.0 under 8, 8.0 under 3
    assert!((explicit["maa"].as_f64().unwrap() - 21.0 / 30.0).abs() < 1e-12);
}

#[test]
fn reduce_writes_selection_table() {
    let dir = tempfile::tempdir().unwrap();
    let h = dir.path().join("h.csv");
    fs::write(&h, "label,mean_e,count\n0,1.0,10\n1,2.0,10\n2,3.0,10\n").unwrap();
    let out = dir.path().join("sel.csv");
    let v = ok(&[
        "reduce",
        "--hardness",
        s(&h),
        "--target",
        "25",
        "--mode",
        "medium",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        (v["sets"].as_u64(), v["patches"].as_u64()),
        (Some(3), Some(25))
    );
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(&lines[..3], &["label,count,indices", "1,10,", "0,10,"]);
    assert!(lines[3].starts_with("2,5,"));
    assert_eq!(lines[3].rsplit(',').next().unwrap().split(' ').count(), 5);
}

#[test]
fn cluster_views_from_pair_table() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("p.json");
    let id = r#"{"H": [1,0,0, 0,1,0, 0,0,1], "inliers": 80}"#;
    fs::write(
        &pairs,
        format!(r#"{{"0,1": {id}, "0,2": null, "2,3": {id}}}"#),
    )
    .unwrap();
    let out = dir.path().join("views.json");
    let v = ok(&["cluster-views", "--pairs", s(&pairs), "--out", s(&out)]);
    assert_eq!(v["views"], 2);
    let written: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written["views"], serde_json::json!([[0, 1], [2, 3]]));
    assert!(written["main_view"].is_null());
}

#[test]
fn zero_shift_leaves_keypoints_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let (kps, moved) = (dir.path().join("k.csv"), dir.path().join("m.csv"));
    ok(&[
        "detect",
        "--input",
        s(&view_dir().join("img_0.png")),
        "--bs",
        "12",
        "--k2",
        "1",
        "--out",
        s(&kps),
    ]);
    ok(&[
        "shift",
        "--keypoints",
        s(&kps),
        "--dx",
        "0",
        "--dy",
        "0",
        "--out",
        s(&moved),
    ]);
    assert_eq!(fs::read(&kps).unwrap(), fs::read(&moved).unwrap());
}
