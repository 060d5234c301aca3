mod common;

use std::collections::BTreeSet;

use modalfuse::corpus::{load_manifest, stratified_kfold, Task};
use modalfuse::encoders::EmbeddingCache;
use modalfuse::eval::{ablation_run, emit_report, ReportFormat};
use modalfuse::fusion::ModelConfigId;
use modalfuse::pipeline::{embed_manifest, resolve_encoders, EmbedRequest};
use modalfuse::preprocess::PreprocessConfig;
use modalfuse::training::{run_cv, TrainConfig, TrainedModel};

fn quick() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn manifest_to_checkpoint_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = common::mixed_modality(dir.path(), 40, 9);
    let mut manifest = load_manifest(&synthetic.manifest, Task::A).unwrap();
    manifest.resolve_paths(dir.path());
    let mut cache = EmbeddingCache::new();
    let data = embed_manifest(
        &EmbedRequest {
            manifest: &manifest,
            text_removed: None,
            text: true,
            image: true,
            require_labels: true,
        },
        &resolve_encoders(true, 42),
        &PreprocessConfig::default(),
        &mut cache,
    )
    .unwrap();
    assert_eq!(data.labels, synthetic.labels.iter().map(|&l| usize::from(l)).collect::<Vec<_>>());

    let folds = stratified_kfold(&manifest, 2, 42).unwrap();
    let results = run_cv(ModelConfigId::M7, &data, &folds, &quick()).unwrap();
    assert_eq!(results.len(), 2);
    let seen: BTreeSet<&String> = results.iter().flat_map(|r| &r.val_ids).collect();
    assert_eq!(seen.len(), 40);
    for r in &results {
        assert!(r.records[0].epochs.len() <= 3);
        assert!(r.predictions.iter().all(|p| p.gate.is_some()));
    }

    let path = dir.path().join("m7.ckpt");
    results[0].model.save(&path, 42).unwrap();
    let restored = TrainedModel::load(&path).unwrap();
    let before = results[0].model.predict(&data).unwrap();
    let after = restored.predict(&data).unwrap();
    for (a, b) in before.iter().zip(&after) {
        for (p, q) in a.probabilities.iter().zip(&b.probabilities) {
            // weights are stored as f32
            assert!((p - q).abs() < 1e-4);
        }
    }
}

#[test]
fn ablation_over_library_api() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = common::mixed_modality(dir.path(), 40, 2);
    let mut manifest = load_manifest(&synthetic.manifest, Task::A).unwrap();
    manifest.resolve_paths(dir.path());
    let data = embed_manifest(
        &EmbedRequest {
            manifest: &manifest,
            text_removed: None,
            text: true,
            image: true,
            require_labels: true,
        },
        &resolve_encoders(true, 42),
        &PreprocessConfig::default(),
        &mut EmbeddingCache::new(),
    )
    .unwrap();
    let folds = stratified_kfold(&manifest, 2, 42).unwrap();
    let configs = [ModelConfigId::M1, ModelConfigId::M2, ModelConfigId::M6];
    let outcome = ablation_run(&data, &folds, &configs, &quick()).unwrap();
    assert_eq!(outcome.table.rows.len(), 3);
    assert_eq!(outcome.table.rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    let m6 = &outcome.results.iter().find(|(c, _)| *c == ModelConfigId::M6).unwrap().1;
    assert!(m6.iter().all(|f| f.records.len() == 3));

    let out = dir.path().join("reports/table.csv");
    let written = emit_report(&outcome.table, ReportFormat::Csv, &out, &[]).unwrap();
    assert_eq!(written.len(), 2);
    assert!(dir.path().join("reports/table_folds.csv").is_file());
}
