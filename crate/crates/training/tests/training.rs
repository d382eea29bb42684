use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signforge_core::layers::{apply_bn_updates, Ctx, Grads, Parameters};
use signforge_core::models::{registry_spec, Model, ModelSpec};
use signforge_core::ops;
use signforge_dataset::{DatasetManifest, Planar};
use signforge_training::report::format_duration;
use signforge_training::{
    compare, early_stop_update, evaluate, sgd_step, synth_shapes, train, Completion, Decision, EarlyStopState,
    LoadedSplit, Metric, ReportRow, RowOutcome, ComparisonReport, TrainConfig, reference_table, TrainError, TrainingData, Velocity,
    SHAPE_CLASSES, REPORT_COLUMNS,
};

fn random_split(n: usize, classes: usize, size: usize, seed: u64) -> LoadedSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n)
        .map(|_| {
            let mut p = Planar::zeros(3, size, size);
            p.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
            p
        })
        .collect();
    LoadedSplit {
        images,
        labels: (0..n).map(|i| i % classes).collect(),
    }
}

fn random_data(classes: usize, size: usize, n_train: usize, n_val: usize, seed: u64) -> TrainingData {
    TrainingData {
        classes: (0..classes).map(|c| format!("c{c}")).collect(),
        size: [size, size],
        normalization: Default::default(),
        train: random_split(n_train, classes, size, seed),
        val: random_split(n_val, classes, size, seed + 1),
    }
}

fn shapes(n: usize, size: usize) -> (tempfile::TempDir, TrainingData) {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_shapes(n, size, 11, dir.path()).unwrap();
    let data = TrainingData::from_manifest(&m).unwrap();
    (dir, data)
}

fn vgg_for(data: &TrainingData) -> ModelSpec {
    data.adapt(registry_spec("mini-vgg").unwrap())
}

fn params(m: &Model) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    m.visit(&mut |_, t, _| out.push(t.data().to_vec()));
    out
}

#[test]
fn synth_shapes_is_deterministic_and_balanced() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = synth_shapes(100, 16, 3, a.path()).unwrap();
    synth_shapes(100, 16, 3, b.path()).unwrap();
    for s in &ma.samples {
        let x = fs::read(a.path().join(&s.path)).unwrap();
        let y = fs::read(b.path().join(&s.path)).unwrap();
        assert_eq!(x, y, "{}", s.path.display());
    }
    assert_eq!(
        fs::read(a.path().join("manifest.json")).unwrap(),
        fs::read(b.path().join("manifest.json")).unwrap()
    );
    let counts = ma.counts();
    assert_eq!(counts.len(), SHAPE_CLASSES.len());
    assert!(counts.iter().all(|(_, c)| *c == 100));
    let reloaded = DatasetManifest::load(a.path().join("manifest.json")).unwrap();
    assert_eq!(reloaded.samples.len(), 300);
    let val = reloaded.split_indices(signforge_dataset::Split::Validation).len();
    assert_eq!(val, 60);
}

#[test]
fn synth_shapes_differ_across_seeds() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = synth_shapes(3, 16, 1, a.path()).unwrap();
    synth_shapes(3, 16, 2, b.path()).unwrap();
    let p = &m.samples[0].path;
    assert_ne!(fs::read(a.path().join(p)).unwrap(), fs::read(b.path().join(p)).unwrap());
}

fn nearest_neighbor_accuracy(data: &TrainingData) -> f64 {
    let correct = data
        .val
        .images
        .iter()
        .zip(&data.val.labels)
        .filter(|(q, &label)| {
            let best = data
                .train
                .images
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let d: f32 = t.data.iter().zip(&q.data).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, i)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1;
            data.train.labels[best] == label
        })
        .count();
    correct as f64 / data.val.len() as f64
}

#[test]
fn trained_vgg_beats_pixel_nearest_neighbor() {
    let (_dir, data) = shapes(100, 32);
    let knn = nearest_neighbor_accuracy(&data);
    let mut model = Model::build(vgg_for(&data), 0).unwrap();
    let cfg = TrainConfig {
        momentum: 0.9,
        ..TrainConfig::default()
    };
    let record = train(&mut model, &data, &cfg).unwrap();
    assert!(
        record.val_accuracy > knn,
        "vgg {} vs 1-NN {knn}",
        record.val_accuracy
    );
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = random_data(3, 16, 24, 9, 0);
    let mut model = Model::build(vgg_for(&data), 0).unwrap();
    let before = params(&model);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let r = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(params(&model), before);
    let first = &r.history[0];
    for m in &r.history {
        assert_eq!((m.train_acc, m.train_loss, m.val_acc, m.val_loss), (first.train_acc, first.train_loss, first.val_acc, first.val_loss));
    }
}

#[test]
fn exhausted_patience_records_early_stop() {
    let data = random_data(3, 16, 24, 9, 0);
    let mut model = Model::build(vgg_for(&data), 0).unwrap();
    let mut cfg = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 10,
        batch_size: 8,
        ..TrainConfig::default()
    };
    cfg.early_stopping.patience = 1;
    let r = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(r.completion, Completion::EarlyStopped);
    assert_eq!(r.epochs_executed, 2);
    assert_eq!(r.best_epoch, 1);

    cfg.max_epochs = 1;
    let r = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(r.completion, Completion::MaxEpochs);
}

#[test]
fn best_weights_are_restored() {
    let (_dir, data) = shapes(12, 16);
    for name in ["mini-vgg", "mini-resnet"] {
        let mut model = Model::build(data.adapt(registry_spec(name).unwrap()), 1).unwrap();
        let mut cfg = TrainConfig {
            max_epochs: 8,
            batch_size: 8,
            learning_rate: 0.01,
            momentum: 0.9,
            ..TrainConfig::default()
        };
        cfg.early_stopping.patience = 2;
        let r = train(&mut model, &data, &cfg).unwrap();
        assert!(r.epochs_executed <= cfg.max_epochs);
        let best = &r.history[r.best_epoch - 1];
        assert!(r.history.iter().all(|m| m.val_loss >= best.val_loss));
        let again = evaluate(&model, &data.val, &data.normalization, 8).unwrap();
        assert!((again.loss - r.val_loss).abs() <= 1e-6, "{name}: {} vs {}", again.loss, r.val_loss);
        assert!((again.accuracy - r.val_accuracy).abs() <= 1e-6);
    }
}

#[test]
fn training_is_deterministic_given_seed() {
    let (_dir, data) = shapes(10, 16);
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 8,
        learning_rate: 0.01,
        momentum: 0.9,
        augment: Some(Default::default()),
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = Model::build(data.adapt(registry_spec("mini-mobilenetv2").unwrap()), 4).unwrap();
        let r = train(&mut m, &data, &cfg).unwrap();
        let metrics: Vec<_> = r.history.iter().map(|h| (h.train_acc, h.train_loss, h.val_acc, h.val_loss)).collect();
        (metrics, params(&m))
    };
    assert_eq!(run(), run());
}

#[test]
fn small_step_decreases_batch_loss() {
    let data = random_data(3, 16, 64, 3, 5);
    let spec = vgg_for(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for trial in 0..10 {
        let model = Model::build(spec.clone(), trial).unwrap();
        let idx: Vec<usize> = (0..16).map(|_| rng.random_range(0..data.train.len())).collect();
        let (x, labels) = data.train.batch(&idx, &data.normalization).unwrap();
        let loss_of = |m: &Model| {
            let (y, _) = m.forward(&x, &mut Ctx::train()).unwrap();
            ops::softmax_cross_entropy(&y, &labels).unwrap().0
        };
        let mut ctx = Ctx::train();
        let (y, cache) = model.forward(&x, &mut ctx).unwrap();
        let (before, g) = ops::softmax_cross_entropy(&y, &labels).unwrap();
        let mut grads = Grads::new();
        model.backward(&cache, &g, &mut grads).unwrap();
        let mut stepped = model.clone();
        sgd_step(&mut stepped, &grads, 1e-4, 0.0, &mut Velocity::default()).unwrap();
        apply_bn_updates(&mut stepped, ctx.bn_updates);
        if loss_of(&stepped) >= before {
            violations += 1;
        }
    }
    assert!(violations <= 1, "{violations} violations");
}

#[test]
fn evaluation_is_batch_size_invariant() {
    let data = random_data(24, 16, 24, 48, 7);
    let model = Model::build(data.adapt(registry_spec("mini-resnet").unwrap()), 0).unwrap();
    let a = evaluate(&model, &data.val, &data.normalization, 1).unwrap();
    let b = evaluate(&model, &data.val, &data.normalization, 64).unwrap();
    assert!((a.loss - b.loss).abs() <= 1e-5, "{} vs {}", a.loss, b.loss);
    assert_eq!(a.correct, b.correct);
    assert_eq!(a.total, 48);
}

#[test]
fn constant_predictor_scores_chance() {
    let data = random_data(24, 16, 24, 96, 3);
    let mut model = Model::build(vgg_for(&data), 0).unwrap();
    model.classifier.weights = model.classifier.weights.scale(0.0);
    model.classifier.bias.data_mut()[0] = 5.0;
    let e = evaluate(&model, &data.val, &data.normalization, 16).unwrap();
    assert!((e.accuracy - 1.0 / 24.0).abs() < 1e-12);
}

#[test]
fn empty_split_rejected() {
    let data = random_data(3, 16, 6, 3, 0);
    let model = Model::build(vgg_for(&data), 0).unwrap();
    let empty = LoadedSplit::default();
    assert!(matches!(
        evaluate(&model, &empty, &data.normalization, 4),
        Err(TrainError::EmptySplit(_))
    ));
}

#[test]
fn divergence_names_epoch_and_batch() {
    let data = random_data(3, 16, 32, 6, 1);
    let mut model = Model::build(vgg_for(&data), 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e30,
        batch_size: 4,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    match train(&mut model, &data, &cfg) {
        Err(TrainError::NonFinite { epoch, batch }) => {
            assert_eq!(epoch, 1);
            assert!(batch >= 2);
            let msg = TrainError::NonFinite { epoch, batch }.to_string();
            assert!(msg.contains("epoch 1") && msg.contains(&format!("batch {batch}")), "{msg}");
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn early_stop_traces() {
    let trace = |seq: &[f64], patience, min_delta| {
        let mut s = EarlyStopState::new();
        for (i, &v) in seq.iter().enumerate() {
            if early_stop_update(&mut s, v, patience, min_delta, false) == Decision::Stop {
                return (Some(i + 1), s.best_epoch);
            }
        }
        (None, s.best_epoch)
    };
    assert_eq!(trace(&[1.0, 0.9, 0.91, 0.92, 0.93], 2, 0.0), (Some(4), 2));
    assert_eq!(trace(&[1.0, 1.0, 1.0], 1, 0.0), (Some(2), 1));
    assert_eq!(trace(&[5.0, 4.0, 3.0, 2.0, 1.0], 1, 0.0), (None, 5));
    assert!(Metric::ValAccuracy.maximize() && !Metric::ValLoss.maximize());
}

fn row(name: &str, epochs: usize, ta: f64, tl: f64, va: f64, vl: f64, secs: f64, ms: f64) -> RowOutcome {
    RowOutcome::Ok(ReportRow {
        model_name: name.into(),
        epochs_executed: epochs,
        train_accuracy: ta,
        train_loss: tl,
        val_accuracy: va,
        val_loss: vl,
        train_seconds: secs,
        inference_ms: ms,
    })
}

#[test]
fn reference_table_reproduces_order_and_cells() {
    let report = ComparisonReport::new(reference_table());
    let names: Vec<&str> = report.rows().iter().map(RowOutcome::model_name).collect();
    assert_eq!(
        names,
        [
            "DenseNet201", "DenseNet169", "RegNetY064", "ResNet152", "RegNetX040", "InceptionV3", "MobileNetV2",
            "NASNet", "Xception", "VGG16"
        ]
    );
    let csv = report.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), REPORT_COLUMNS.join(","));
    assert_eq!(lines.next().unwrap(), "DenseNet201,47,0.9998,0.0483,0.8042,1.2051,3h 44m,37ms");
    assert_eq!(csv.lines().nth(7).unwrap(), "MobileNetV2,39,0.9995,0.0905,0.7542,1.3007,59m,10ms");
    assert_eq!(csv.lines().last().unwrap(), "VGG16,30,0.9993,0.1762,0.6889,2.2666,1h 42m,25ms");
    assert_eq!(format_duration(3.0 * 3600.0 + 2.0 * 60.0), "3h 02m");
    let table = report.to_table();
    assert!(table.lines().next().unwrap().starts_with("Model Name"));
}

#[test]
fn compare_keeps_every_run_and_orders_them() {
    let data = random_data(3, 16, 12, 6, 2);
    let vgg = registry_spec("mini-vgg").unwrap();
    let mut twin = vgg.clone();
    twin.name = "mini-vgg-twin".into();
    let mut broken = vgg.clone();
    broken.name = "broken".into();
    broken.stages.extend(broken.stages.clone());
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let report = compare(&[broken, vgg, twin], &data, &cfg).unwrap();
    let rows = report.rows();
    assert_eq!(rows.len(), 3);
    let (RowOutcome::Ok(a), RowOutcome::Ok(b)) = (&rows[0], &rows[1]) else {
        panic!("expected two successful runs first: {rows:?}");
    };
    assert_eq!(
        (a.epochs_executed, a.train_accuracy, a.train_loss, a.val_accuracy, a.val_loss),
        (b.epochs_executed, b.train_accuracy, b.train_loss, b.val_accuracy, b.val_loss)
    );
    assert!(matches!(&rows[2], RowOutcome::Failed { model_name, .. } if model_name == "broken"));
    assert!(matches!(compare(&[registry_spec("mini-vgg").unwrap()], &data, &cfg), Err(TrainError::Config(_))));
}

#[test]
fn run_directory_contents() {
    let data = random_data(3, 16, 12, 6, 2);
    let mut model = Model::build(vgg_for(&data), 0).unwrap();
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let record = train(&mut model, &data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    signforge_training::write_run_dir(dir.path(), &record, &model).unwrap();
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + record.epochs_executed);
    assert!(history.starts_with("epoch,train_acc,train_loss,val_acc,val_loss,seconds"));
    let back = Model::load(dir.path().join("model.sgnf")).unwrap();
    assert_eq!(params(&back), params(&model));
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config["train"]["batch_size"], 4);
    assert!(fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("Model Name"));
    let back: signforge_training::RunRecord = serde_json::from_str(&fs::read_to_string(dir.path().join("record.json")).unwrap()).unwrap();
    assert_eq!(back.history.len(), record.history.len());
    assert_eq!((back.best_epoch, back.completion), (record.best_epoch, record.completion));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn report_order_is_a_sorted_permutation(
            rows in prop::collection::vec((0u8..5, 0u8..5, any::<bool>()), 2..12)
        ) {
            let input: Vec<RowOutcome> = rows
                .iter()
                .enumerate()
                .map(|(i, &(acc, loss, ok))| {
                    if ok {
                        row(&format!("m{i}"), 1, 1.0, 0.1, acc as f64 / 4.0, loss as f64, 1.0, 1.0)
                    } else {
                        RowOutcome::Failed { model_name: format!("m{i}"), error: "x".into() }
                    }
                })
                .collect();
            let report = ComparisonReport::new(input.clone());
            let mut a: Vec<&str> = input.iter().map(RowOutcome::model_name).collect();
            let mut b: Vec<&str> = report.rows().iter().map(RowOutcome::model_name).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            for w in report.rows().windows(2) {
                match (&w[0], &w[1]) {
                    (RowOutcome::Ok(x), RowOutcome::Ok(y)) => {
                        prop_assert!(x.val_accuracy > y.val_accuracy
                            || (x.val_accuracy == y.val_accuracy && x.val_loss <= y.val_loss));
                    }
                    (RowOutcome::Failed { .. }, RowOutcome::Ok(_)) => prop_assert!(false, "failed row before ok row"),
                    _ => {}
                }
            }
        }
    }
}
