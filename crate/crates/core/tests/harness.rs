mod common;

use std::collections::BTreeMap;

use mrsnet::autograd::Tensor;
use mrsnet::checkpoint;
use mrsnet::config::TrainConfig;
use mrsnet::data_model::{stratified_split, DatasetIndex, Language};
use mrsnet::harness::{self, EvalOptions, ABLATION_GRID};
use mrsnet::ifim::AblationFlags;
use mrsnet::network::{LossConfig, Model};
use mrsnet::optim::{cosine_lr, AdamW, AdamWConfig};
use mrsnet::synthetic::{self, SyntheticOptions};
use mrsnet::Error;

fn quick_config(dir: &std::path::Path, steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs: 2,
        max_steps: Some(steps),
        ..common::overfit_config(dir)
    }
}

fn split_dataset(count: usize, seed: u64) -> DatasetIndex {
    let index = synthetic::dataset(&SyntheticOptions::new(count, 128, seed)).unwrap();
    stratified_split(index, [0.7, 0.1, 0.2], seed).unwrap()
}

#[test]
fn schedule_endpoints() {
    assert_eq!(cosine_lr(6e-4, 0, 200), 6e-4);
    assert!((cosine_lr(6e-4, 100, 200) - 3e-4).abs() < 1e-9);
    assert!(cosine_lr(6e-4, 200, 200) <= 1e-9);
}

#[test]
fn training_is_reproducible_and_logs_json_lines() {
    let data = split_dataset(10, 1);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut log = Vec::new();
    let run_a = harness::train(&quick_config(a.path(), 3), &data, None, &mut log).unwrap();
    let run_b = harness::train(&quick_config(b.path(), 3), &data, None, &mut std::io::sink()).unwrap();
    assert_eq!(run_a.steps, 3);
    assert_eq!(run_a.losses.len(), 3);
    for (x, y) in run_a.losses.iter().zip(&run_b.losses) {
        assert!((x - y).abs() <= 1e-6);
    }
    let events: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let kinds: Vec<&str> = events.iter().map(|e| e["event"].as_str().unwrap()).collect();
    assert_eq!(kinds.first(), Some(&"start"));
    assert_eq!(kinds.last(), Some(&"done"));
    assert_eq!(kinds.iter().filter(|k| **k == "step").count(), 3);
    assert!(kinds.contains(&"epoch"));
    let epoch = events.iter().find(|e| e["event"] == "epoch").unwrap();
    let keys: Vec<&String> = epoch["val"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["P@0.7", "P@0.8", "P@0.9", "oIoU", "mIoU"]);
    assert!(run_a.best_val.is_some());

    let report_a = harness::evaluate(&run_a.checkpoint, &data, "test", &EvalOptions::default()).unwrap().0;
    let report_b = harness::evaluate(&run_b.checkpoint, &data, "test", &EvalOptions::default()).unwrap().0;
    assert_eq!(report_a, report_b);
}

#[test]
fn evaluation_needs_a_populated_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = split_dataset(10, 2);
    let run = harness::train(&quick_config(dir.path(), 1), &data, None, &mut std::io::sink()).unwrap();
    let ids: Vec<String> = data.samples().iter().map(|r| r.id.clone()).collect();
    let only_train = synthetic::dataset(&SyntheticOptions::new(10, 128, 2))
        .unwrap()
        .with_splits(BTreeMap::from([("train".to_string(), ids), ("test".to_string(), Vec::new())]))
        .unwrap();
    assert!(harness::evaluate(&run.checkpoint, &only_train, "test", &EvalOptions::default()).is_err());
    assert!(harness::evaluate(&run.checkpoint, &only_train, "val", &EvalOptions::default()).is_err());
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), 1);
    let model = Model::new(cfg.model.clone(), 9).unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &cfg, Some(std::path::Path::new("split.json")), &model.store).unwrap();
    let (meta, loaded) = checkpoint::load(&path).unwrap();
    assert_eq!(meta.config, cfg);
    assert_eq!(meta.data.as_deref(), Some(std::path::Path::new("split.json")));
    for id in model.store.ids() {
        let other = loaded.store.find(model.store.name(id)).unwrap();
        assert_eq!(loaded.store.get(other), model.store.get(id));
    }

    let mut wider = cfg.clone();
    wider.model.stage_dims = vec![16, 32, 64, 256];
    let bad = dir.path().join("bad.ckpt");
    checkpoint::save(&bad, &wider, None, &model.store).unwrap();
    match checkpoint::load(&bad) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("expects"), "{msg}"),
        other => panic!("expected a checkpoint error, got {:?}", other.map(|_| ())),
    }
    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert!(matches!(checkpoint::load(&dir.path().join("junk.ckpt")), Err(Error::Checkpoint(_))));
}

#[test]
fn non_finite_loss_names_the_first_bad_tensor() {
    let data = split_dataset(4, 3);
    let mut model = Model::new(common::tiny_network(), 3).unwrap();
    let id = model.store.find("encoder.down2.weight").unwrap();
    let shape = model.store.get(id).shape().to_vec();
    model.store.set(id, Tensor::full(shape, f64::NAN)).unwrap();
    let records: Vec<_> = data.samples().iter().take(2).collect();
    let batch = harness::prepare_batch(&records, None).unwrap();
    let mut opt = AdamW::new(AdamWConfig::default());
    let before = model.store.clone();
    let err = harness::train_step(&mut model, &mut opt, &batch, AblationFlags::default(), LossConfig::default(), 1e-3)
        .err()
        .expect("NaN must abort the step");
    assert_eq!(err.kind(), "non_finite", "{err}");
    assert!(err.to_string().contains("encoder.2"), "{err}");
    let untouched = model.store.find("decoder.head.weight").unwrap();
    assert_eq!(model.store.get(untouched), before.get(untouched));
}

#[test]
fn english_only_training_skips_other_languages() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = synthetic::generate(&SyntheticOptions::new(4, 128, 4)).unwrap();
    for s in &mut samples {
        s.expression.language = Language::Zh;
        s.expression.text = "红色的圆".into();
    }
    let index = DatasetIndex::from_samples(mrsnet::data_model::CategoryTaxonomy::standard(), samples).unwrap();
    let ids: Vec<String> = index.samples().iter().map(|r| r.id.clone()).collect();
    let index = index.with_splits(BTreeMap::from([("train".to_string(), ids)])).unwrap();
    let cfg = quick_config(dir.path(), 1);
    let err = harness::train(&cfg, &index, None, &mut std::io::sink()).err().unwrap();
    assert!(err.to_string().contains("empty"), "{err}");
    let all_languages = TrainConfig {
        english_only: false,
        ..cfg
    };
    assert_eq!(harness::train(&all_languages, &index, None, &mut std::io::sink()).unwrap().steps, 1);
}

#[test]
fn ablation_grid_has_three_rows_with_recorded_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = split_dataset(10, 5);
    let cfg = quick_config(dir.path(), 1);
    let report = harness::ablate(&cfg, &data, None, &mut std::io::sink()).unwrap();
    assert_eq!(report.rows.len(), 3);
    for (row, flags) in report.rows.iter().zip(ABLATION_GRID) {
        assert_eq!((row.use_psr, row.use_csr), (flags.use_psr, flags.use_csr));
        let meta = checkpoint::read_meta(&row.checkpoint).unwrap();
        assert_eq!(meta.config.flags(), flags);
    }
    let table = report.table();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header, ["PSR", "CSR", "P@0.7", "P@0.8", "P@0.9", "oIoU", "mIoU"]);
    let marks: Vec<Vec<&str>> = lines[2..].iter().map(|l| l.split_whitespace().take(2).collect()).collect();
    assert_eq!(marks, [["yes", "no"], ["no", "yes"], ["yes", "yes"]]);
}
