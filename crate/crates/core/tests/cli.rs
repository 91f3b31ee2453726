use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sum_core::data::netpbm::Raster;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sum"))
        .args(args)
        .env("SUM_THREADS", "1")
        .output()
        .expect("spawn sum")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#""base_channels": 4, "state_size": 2, "input_size": 32, "token_dim": 8, "batch_size": 4, "epochs": 1"#;

/// Data plus one trained checkpoint under `root`.
fn trained(root: &Path) {
    let o = run(&["generate-data", "--out", p(&root.join("data")), "--per-domain", "2", "--size", "32", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = format!(
        "{{\"model\": {{{TINY}}}, \"train_manifest\": \"data/train.tsv\", \"val_manifest\": \"data/val.tsv\", \"test_manifest\": \"data/test.tsv\", \"checkpoint\": \"run/checkpoint.ckpt\", \"out_dir\": \"run\"}}"
    );
    fs::write(root.join("config.json"), cfg).unwrap();
    let o = run(&["train", "--config", p(&root.join("config.json"))]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn size_not_a_multiple_of_32_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate-data", "--out", p(dir.path()), "--size", "60"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("multiple of 32"), "{}", stderr(&o));

    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"model": {"input_size": 60}, "train_manifest": "x.tsv", "out_dir": "o"}"#).unwrap();
    let o = run(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("input_size"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"model": {"base_chanels": 8}, "train_manifest": "x.tsv"}"#).unwrap();
    let o = run(&["train", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("base_chanels"), "{}", stderr(&o));
}

#[test]
fn bad_domain_lists_choices() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "infer",
        "--checkpoint",
        p(&dir.path().join("m.ckpt")),
        "--image",
        p(&dir.path().join("i.ppm")),
        "--domain",
        "satellite",
        "--out",
        p(&dir.path().join("o.pgm")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("natural-eye"), "{}", stderr(&o));
}

#[test]
fn missing_manifest_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--oracle", "--manifest", p(&dir.path().join("nope.tsv")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.tsv"), "{}", stderr(&o));
}

#[test]
fn train_eval_infer_round() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    trained(root);
    for f in ["checkpoint.ckpt", "report.json", "epochs.jsonl"] {
        assert!(root.join("run").join(f).is_file(), "{f}");
    }

    // eval twice gives identical per-sample lines
    let cfg = root.join("config.json");
    for out in ["e1", "e2"] {
        let o = run(&["eval", "--config", p(&cfg), "--out", p(&root.join(out))]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let e1 = fs::read_to_string(root.join("e1/eval.jsonl")).unwrap();
    assert_eq!(e1, fs::read_to_string(root.join("e2/eval.jsonl")).unwrap());
    assert_eq!(e1.lines().count(), 2);
    let v: serde_json::Value = serde_json::from_str(e1.lines().next().unwrap()).unwrap();
    for k in ["sample_id", "cc", "kld", "auc", "sim", "nss"] {
        assert!(v.get(k).is_some(), "{k}");
    }

    // two checkpoints add an F-score table
    let ck = p(&root.join("run/checkpoint.ckpt")).to_string();
    let o = run(&["eval", "--config", p(&cfg), "--checkpoint", &ck, "--checkpoint", &ck, "--out", p(&root.join("e3"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("e3/eval-1.jsonl").is_file());
    assert!(fs::read_to_string(root.join("e3/summary.txt")).unwrap().contains(" F"));

    // non-square input comes back at its own size; a constant image gives a valid map
    let img = Raster::new(48, 40, 3, vec![128; 48 * 40 * 3]).unwrap();
    let img_path = root.join("flat.ppm");
    img.write(&img_path).unwrap();
    let out = root.join("flat.pgm");
    let o = run(&["infer", "--checkpoint", &ck, "--image", p(&img_path), "--domain", "ui", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let map = Raster::read(&out, 1).unwrap();
    assert_eq!((map.width, map.height), (48, 40));
}

#[test]
fn checkpoint_config_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    trained(root);
    let wide = root.join("wide.json");
    fs::write(
        &wide,
        r#"{"model": {"base_channels": 8, "state_size": 2, "input_size": 32, "token_dim": 8}, "test_manifest": "data/test.tsv", "checkpoint": "run/checkpoint.ckpt", "out_dir": "w"}"#,
    )
    .unwrap();
    let o = run(&["eval", "--config", p(&wide)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shape mismatch"), "{}", stderr(&o));
}
