mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mrsnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrsnet"))
        .args(args)
        .current_dir(cwd)
        .env("MRSNET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().next().expect("stdout line")).expect("JSON first line")
}

/// The failure contract: exit status 1 and exactly one JSON line on stderr.
fn error_line(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["error"].is_string() && v["message"].is_string());
    v
}

#[test]
fn end_to_end_split_train_eval_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = mrsnet(&["synth", "--out", "data", "--count", "10", "--size", "128", "--seed", "3"], d);
    assert!(synth.status.success());
    assert_eq!(stdout_json(&synth)["samples"], 10);

    let split = mrsnet(&["split", "--manifest", "data/manifest.json", "--ratios", "0.7,0.1,0.2", "--seed", "0", "--out", "split.json"], d);
    assert!(split.status.success(), "{}", String::from_utf8_lossy(&split.stderr));
    let sizes = &stdout_json(&split)["sizes"];
    assert_eq!((sizes["train"].as_u64(), sizes["val"].as_u64(), sizes["test"].as_u64()), (Some(7), Some(1), Some(2)));

    let cfg = mrsnet::config::TrainConfig {
        batch_size: 4,
        max_steps: Some(2),
        ..common::overfit_config(&d.join("runs"))
    };
    std::fs::write(d.join("config.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let train = mrsnet(&["train", "--config", "config.json", "--data", "split.json"], d);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert_eq!(stdout_json(&train)["steps"], 2);
    let log = String::from_utf8_lossy(&train.stderr);
    assert!(log.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    let ckpt = stdout_json(&train)["checkpoint"].as_str().unwrap().to_string();

    // The checkpoint remembers its split file, so --data is optional.
    let eval = mrsnet(&["eval", "--ckpt", &ckpt, "--split", "both"], d);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let report = stdout_json(&eval);
    for split in ["val", "test"] {
        let keys: Vec<&String> = report[split].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["P@0.7", "P@0.8", "P@0.9", "oIoU", "mIoU"]);
    }
    let text = String::from_utf8_lossy(&eval.stdout);
    let table: Vec<&str> = text.lines().skip(1).collect();
    assert!(table[0].starts_with("Method") && table[0].contains("P@0.7 val") && table[0].ends_with("mIoU test"));
    assert!(table[2].starts_with("MRSNet"));

    let ablate = mrsnet(&["ablate", "--config", "config.json", "--data", "split.json"], d);
    assert!(ablate.status.success(), "{}", String::from_utf8_lossy(&ablate.stderr));
    let rows = stdout_json(&ablate)["rows"].as_array().unwrap().len();
    assert_eq!(rows, 3);
    assert!(d.join("runs/psr_on_csr_off/best.ckpt").is_file());
    assert!(d.join("runs/psr_off_csr_on/best.ckpt").is_file());
    assert!(d.join("runs/psr_on_csr_on/best.ckpt").is_file());
}

#[test]
fn errors_are_single_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = mrsnet(&["split", "--manifest", "nope.json"], d);
    assert!(error_line(&missing)["message"].as_str().unwrap().contains("nope.json"));

    std::fs::write(d.join("bad.json"), r#"{"lr": -1}"#).unwrap();
    let bad_cfg = mrsnet(&["train", "--config", "bad.json", "--data", "x.json"], d);
    assert_eq!(error_line(&bad_cfg)["error"], "config");

    let bad_ratios = mrsnet(&["split", "--manifest", "m.json", "--ratios", "0.7,0.3"], d);
    assert_eq!(error_line(&bad_ratios)["error"], "config");

    let usage = mrsnet(&["eval", "--split", "val"], d);
    assert_eq!(error_line(&usage)["error"], "usage");

    std::fs::write(d.join("junk.ckpt"), b"junk").unwrap();
    let junk = mrsnet(&["eval", "--ckpt", "junk.ckpt", "--data", "s.json"], d);
    assert_eq!(error_line(&junk)["error"], "io");

    let threads = Command::new(env!("CARGO_BIN_EXE_mrsnet"))
        .args(["synth", "--out", "x"])
        .current_dir(d)
        .env("MRSNET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(error_line(&threads)["error"], "config");
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrsnet(&["--help"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["split", "train", "eval", "ablate"] {
        assert!(text.contains(cmd));
    }
}
