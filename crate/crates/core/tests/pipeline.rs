//! End-to-end runs of the library pipeline on tiny datasets.

use std::path::Path;

use mar_core::nn::{Model, Variant};
use mar_core::pipeline::{
    correct_scan, evaluate, generate_dataset, load_cases, simulate_dataset, train, DatasetConfig, EvalOptions,
    Manifest, Method, Models, Split, TrainConfig,
};
use mar_core::projector::Projector;

fn tiny_data(seed: u64) -> DatasetConfig {
    DatasetConfig {
        image_size: 32,
        n_train: 6,
        n_test: 2,
        seed,
        sim: Default::default(),
        phantom: Default::default(),
    }
}

fn tiny_train(variant: Variant) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 3,
        image_size: 32,
        n_train: 6,
        n_test: 2,
        width: 2,
        scales: 2,
        variant,
        checkpoint_every: 1,
        ..TrainConfig::desk()
    }
}

#[test]
fn stored_dataset_matches_the_in_memory_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_data(5);
    let manifest = generate_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(manifest.entries(Split::Train).count(), 6);
    assert_eq!(manifest.entries(Split::Test).count(), 2);
    let reloaded = Manifest::load(dir.path()).unwrap();
    assert_eq!(reloaded.geometry, manifest.geometry);

    let mut stored = load_cases(dir.path(), &reloaded, Split::Train).unwrap();
    stored.extend(load_cases(dir.path(), &reloaded, Split::Test).unwrap());
    let simulated = simulate_dataset(&cfg).unwrap();
    assert_eq!(stored.len(), simulated.len());
    for (a, b) in stored.iter().zip(&simulated) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.s_ma.values, b.s_ma.values);
        assert_eq!(a.s_gt.values, b.s_gt.values);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn different_seeds_give_different_data() {
    let a = simulate_dataset(&tiny_data(1)).unwrap();
    let b = simulate_dataset(&tiny_data(2)).unwrap();
    assert_ne!(a[0].s_ma.values, b[0].s_ma.values);
}

fn train_into(cfg: &TrainConfig, data: &Path, out: &Path) -> Model {
    let mut epochs = Vec::new();
    let trained = train(cfg, data, Some(out), |e| epochs.push(e.epoch)).unwrap();
    assert_eq!(epochs, vec![0, 1, 2]);
    assert_eq!(trained.log.len(), 3);
    assert!(trained.log[0].train.is_none());
    assert!(trained.log.iter().all(|e| e.validation.total.is_finite()));
    trained.model
}

#[test]
fn training_writes_checkpoints_that_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate_dataset(&tiny_data(3), &data).unwrap();
    let out = dir.path().join("run");
    let model = train_into(&tiny_train(Variant::Full), &data, &out);

    for name in ["epoch_0001.ckpt", "model.ckpt", "train_log.json", "train_config.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    // the last epoch is only written as the final model
    assert!(!out.join("epoch_0002.ckpt").exists());
    let loaded = Model::load(&out.join("model.ckpt")).unwrap();
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.spec, model.spec);
    assert_eq!(loaded.step, 4);

    let manifest = Manifest::load(&data).unwrap();
    let cases = load_cases(&data, &manifest, Split::Test).unwrap();
    let projector = Projector::new(&manifest.geometry);
    let threshold = 2000.0;
    let a = correct_scan(&model, &cases[0].s_ma, threshold, &projector).unwrap();
    let b = correct_scan(&loaded, &cases[0].s_ma, threshold, &projector).unwrap();
    assert_eq!(a.x_out.values, b.x_out.values);
    assert!(a.x_out.values.iter().all(|v| v.is_finite()));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate_dataset(&tiny_data(4), &data).unwrap();
    let cfg = tiny_train(Variant::NoPrior);
    let a = train_into(&cfg, &data, &dir.path().join("a"));
    let b = train_into(&cfg, &data, &dir.path().join("b"));
    assert_eq!(a.params, b.params);
}

#[test]
fn mismatched_image_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&tiny_data(3), dir.path()).unwrap();
    let cfg = TrainConfig {
        image_size: 64,
        ..tiny_train(Variant::Full)
    };
    let e = train(&cfg, dir.path(), None, |_| {}).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn evaluation_reports_every_method_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = generate_dataset(&tiny_data(6), &data).unwrap();
    let model = train_into(&tiny_train(Variant::Full), &data, &dir.path().join("run"));
    let cases = load_cases(&data, &manifest, Split::Test).unwrap();
    let projector = Projector::new(&manifest.geometry);
    let mut models = Models::new();
    models.insert(Variant::Full, model);
    let methods = [
        Method::Uncorrected,
        Method::Li,
        Method::Nmar,
        Method::Model(Variant::Full),
    ];
    let opts = EvalOptions {
        panels: 1,
        ..EvalOptions::default()
    };
    let out = dir.path().join("eval");
    let report = evaluate(&cases, &methods, &projector, &models, &opts, Some(&out)).unwrap();

    assert_eq!(report.rows.len(), methods.len() * cases.len());
    for m in methods {
        let s = report.summary_for(m).unwrap();
        assert_eq!(s.cases, cases.len());
        assert!(s.rmse_mean.is_finite() && s.rmse_mean >= 0.0);
        assert!((-1.0..=1.0).contains(&s.ssim_mean));
    }
    // any completion beats leaving the metal trace in place
    assert!(report.mean_rmse(Method::Li).unwrap() < report.mean_rmse(Method::Uncorrected).unwrap());
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("summary.json").exists());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
}

#[test]
fn evaluating_a_model_method_without_a_model_fails() {
    let cases = simulate_dataset(&tiny_data(7)).unwrap();
    let projector = Projector::new(&tiny_data(7).geometry().unwrap());
    let r = evaluate(
        &cases[..1],
        &[Method::Model(Variant::Full)],
        &projector,
        &Models::new(),
        &EvalOptions::default(),
        None,
    );
    assert!(r.is_err());
}
