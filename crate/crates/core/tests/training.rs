//! End-to-end behaviour of the training loops on a small synthetic cohort.

use std::sync::OnceLock;

use sit_core::autodiff::Checkpoint;
use sit_core::data::{AmplitudeModel, Dataset, Split, SyntheticSpec, Synthesizer};
use sit_core::model::{SiTModel, HEAD_PREFIX};
use sit_core::training::{
    build_model, mae, parse_pairs, mean_baseline_mae, model_config, predict_examples, pretrain_mpp, train, EpochLog,
    Objective, Task, TrainConfig, TrainMetadata, TrainOptions, BEST_CHECKPOINT, METRICS_FILE,
};
use sit_core::Error;

fn dataset() -> &'static Dataset {
    static DS: OnceLock<Dataset> = OnceLock::new();
    DS.get_or_init(|| {
        let spec = SyntheticSpec {
            subjects: 30,
            mesh_order: 3,
            seed: 3,
            amplitude: AmplitudeModel::Developmental { age_jitter: 1.0 },
            ..Default::default()
        };
        Dataset::synthesize(&Synthesizer::new(spec).unwrap(), 1).unwrap()
    })
}

/// Base settings with `extra` lines overriding them.
fn config(extra: &str) -> TrainConfig {
    let mut cfg = TrainConfig::parse(
        "task=pma\nvariant=micro\noptimizer=adam\nlr=0.001\nwarmup_epochs=1\nbatch_size=8\nepochs=2\nthreads=1\n\
         patch_order=1\nseed=9",
    )
    .unwrap();
    for (k, v) in parse_pairs(extra).unwrap() {
        cfg.set(&k, &v).unwrap();
    }
    cfg
}

fn run(extra: &str) -> sit_core::training::TrainResult {
    train(dataset(), &config(extra), None, &TrainOptions::default()).unwrap()
}

fn without_clock(log: &[EpochLog]) -> Vec<(usize, u64, u64, u64)> {
    log.iter()
        .map(|e| (e.epoch, e.train_loss.to_bits(), e.val_metric.to_bits(), e.lr.to_bits()))
        .collect()
}

fn tensors(model: &SiTModel<f32>) -> Checkpoint {
    model.to_checkpoint()
}

#[test]
fn zero_learning_rate_leaves_weights_untouched() {
    for opt in ["sgd", "adam"] {
        let cfg = config(&format!("optimizer={opt}\nlr=0"));
        let initial = build_model(&cfg, dataset(), None).unwrap();
        let r = train(dataset(), &cfg, None, &TrainOptions::default()).unwrap();
        assert_eq!(tensors(&r.model), tensors(&initial), "{opt}");
        assert!(r.log.iter().all(|e| e.lr == 0.0));
    }
}

#[test]
fn seeded_runs_repeat_exactly() {
    let (a, b) = (run(""), run(""));
    assert_eq!(without_clock(&a.log), without_clock(&b.log));
    assert_eq!(tensors(&a.model), tensors(&b.model));
    let c = run("seed=10");
    assert_ne!(without_clock(&a.log), without_clock(&c.log));
}

#[test]
fn fixed_thread_count_is_deterministic() {
    let (a, b) = (run("threads=3"), run("threads=3"));
    assert_eq!(without_clock(&a.log), without_clock(&b.log));
    assert_eq!(tensors(&a.model), tensors(&b.model));
    // a different split of the batch only reorders float sums
    let single = run("threads=1");
    let gap = (a.log[0].train_loss - single.log[0].train_loss).abs();
    assert!(gap < 1e-4 * single.log[0].train_loss.abs().max(1.0), "gap {gap}");
}

#[test]
fn frozen_backbone_only_moves_the_head() {
    let cfg = config("freeze_backbone=true\nlr=0.01");
    let initial = build_model(&cfg, dataset(), None).unwrap();
    let r = train(dataset(), &cfg, None, &TrainOptions::default()).unwrap();
    let mut head_moved = false;
    for ((name, before), (_, after)) in tensors(&initial).tensors.iter().zip(&tensors(&r.model).tensors) {
        if name.starts_with(HEAD_PREFIX) {
            head_moved |= before != after;
        } else {
            assert_eq!(before, after, "{name} changed");
        }
    }
    assert!(head_moved);
}

#[test]
fn pretraining_lowers_reconstruction_loss() {
    let cfg = config("epochs=6\nlr=0.002");
    let r = pretrain_mpp(dataset(), &cfg, None, &TrainOptions::default()).unwrap();
    assert_eq!(r.metadata.objective, Objective::Mpp);
    let first = r.log.first().unwrap();
    let last = r.log.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{} -> {}", first.train_loss, last.train_loss);
    assert!(r.best_metric <= first.val_metric);

    // the pretrained encoder initializes regression training
    let ft = train(dataset(), &config(""), Some(&r.checkpoint()), &TrainOptions::default()).unwrap();
    assert!(ft.best_metric.is_finite());
}

#[test]
fn training_beats_the_mean_baseline() {
    let r = run("epochs=12\nbatch_size=4");
    let baseline = mean_baseline_mae(dataset(), Task::ScanAge, Split::Val).unwrap();
    assert!(r.best_metric < baseline, "best {} vs baseline {baseline}", r.best_metric);
    assert_eq!(r.best_metric, r.log[r.best_epoch - 1].val_metric);

    // the reported metric is the MAE of the returned model's predictions
    let preds = predict_examples(&r.model, &r.metadata, &dataset().val, 1).unwrap();
    let truth: Vec<f64> = dataset().val.iter().map(|e| e.labels.scan_age).collect();
    let direct = mae(&preds, &truth).unwrap();
    assert!((direct - r.best_metric).abs() < 1e-9, "{direct} vs {}", r.best_metric);
}

#[test]
fn mean_baseline_matches_a_hand_computation() {
    let ds = dataset();
    for (task, label) in [(Task::ScanAge, 0), (Task::BirthAge, 1)] {
        let pick = |e: &sit_core::data::Example| if label == 0 { e.labels.scan_age } else { e.labels.birth_age };
        let mean = ds.train.iter().map(pick).sum::<f64>() / ds.train.len() as f64;
        let want = ds.test.iter().map(|e| (pick(e) - mean).abs()).sum::<f64>() / ds.test.len() as f64;
        let got = mean_baseline_mae(ds, task, Split::Test).unwrap();
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn empty_validation_split_is_a_config_error() {
    let mut ds = dataset().clone();
    ds.val.clear();
    let err = train(&ds, &config(""), None, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let err = pretrain_mpp(&ds, &config(""), None, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn nan_input_stops_training() {
    let mut ds = dataset().clone();
    ds.train[0].sequence.tokens.data_mut()[0] = f32::NAN;
    let err = train(&ds, &config("batch_size=64"), None, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
}

#[test]
fn task_does_not_change_the_architecture() {
    let pma = config("task=pma");
    let ga = config("task=ga");
    assert_eq!(model_config(&pma, dataset()).unwrap(), model_config(&ga, dataset()).unwrap());
    let (a, b) = (build_model(&pma, dataset(), None).unwrap(), build_model(&ga, dataset(), None).unwrap());
    assert_eq!(tensors(&a), tensors(&b));

    // deconfounding adds exactly the confound projection
    let token = build_model(&config("task=ga\ndeconfound=true"), dataset(), None).unwrap();
    let extra: Vec<String> = token
        .params
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| b.params.id(n).is_none())
        .collect();
    assert!(!extra.is_empty() && extra.iter().all(|n| n.starts_with("confound.")), "{extra:?}");
}

#[test]
fn outputs_land_in_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("task=ga\ndeconfound=true");
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        time_limit: None,
    };
    let r = train(dataset(), &cfg, None, &opts).unwrap();

    let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_mae,lr,wall_seconds");
    assert_eq!(lines.len(), 1 + cfg.optimizer.epochs);

    let ck = Checkpoint::load(dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(ck, r.checkpoint());
    let meta = TrainMetadata::from_record(&ck.config).unwrap();
    assert_eq!(meta.task, Task::BirthAge);
    assert!(meta.confound.is_some());
    let model = SiTModel::<f32>::from_checkpoint(&ck).unwrap();
    let (p1, p2) = (
        predict_examples(&model, &meta, &dataset().test, 1).unwrap(),
        predict_examples(&r.model, &r.metadata, &dataset().test, 1).unwrap(),
    );
    assert_eq!(p1, p2);

    let resolved = std::fs::read_to_string(dir.path().join("resolved.cfg")).unwrap();
    assert_eq!(TrainConfig::parse(&resolved).unwrap().to_text(), cfg.to_text());
}

#[test]
fn time_limit_stops_after_an_epoch() {
    let opts = TrainOptions {
        out_dir: None,
        time_limit: Some(std::time::Duration::ZERO),
    };
    let r = train(dataset(), &config("epochs=5"), None, &opts).unwrap();
    assert!(!r.completed);
    assert_eq!(r.log.len(), 1);
}
