//! Library-level training runs on a tiny model.

use mstcn::checkpoint;
use mstcn::data::{collate, synth_generate, SplitDatasets, SynthConfig};
use mstcn::frontend::FrontendSpec;
use mstcn::model::{LipReader, ModelSpec};
use mstcn::temporal::MultiScaleTCNSpec;
use mstcn::train::{evaluate, fit, HardPretrainConfig, TrainConfig};

fn data(classes: usize) -> SplitDatasets {
    let cfg = SynthConfig {
        num_classes: classes,
        frame_size: 16,
        train_size: 12,
        val_size: 6,
        test_size: 6,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, 21).unwrap()
}

fn spec(classes: usize) -> ModelSpec {
    ModelSpec {
        frontend: FrontendSpec {
            stage_widths: vec![4, 8],
            ..FrontendSpec::default()
        },
        tcn: MultiScaleTCNSpec {
            num_blocks: 2,
            channels: 6,
            num_classes: classes,
            ..MultiScaleTCNSpec::default()
        },
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        crop_size: Some(14),
        eval_batch_size: 5,
        variable_length: true,
        ..TrainConfig::default()
    }
}

#[test]
fn fit_is_deterministic_on_disk() {
    let d = data(3);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut m = LipReader::<f32>::new(spec(3), 2).unwrap();
        fit(&mut m, &d, &train_cfg(), 2, Some(dir.path())).unwrap();
        ["metrics.csv", "best.ckpt", "last.ckpt"]
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn seeds_change_the_run() {
    let d = data(3);
    let acc = |seed| {
        let mut m = LipReader::<f32>::new(spec(3), seed).unwrap();
        let out = fit(&mut m, &d, &train_cfg(), seed, None).unwrap();
        out.records.iter().map(|r| r.loss).collect::<Vec<_>>()
    };
    assert_ne!(acc(1), acc(2));
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let d = data(3);
    let dir = tempfile::tempdir().unwrap();
    let mut m = LipReader::<f32>::new(spec(3), 4).unwrap();
    let out = fit(&mut m, &d, &train_cfg(), 4, Some(dir.path())).unwrap();
    let (loaded, meta) = checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(meta["epoch"], out.best_epoch);
    for n in [0, 2] {
        let a = evaluate(&out.best, &d.test, n, Some(14), 4, 9).unwrap();
        let b = evaluate(&loaded, &d.test, n, Some(14), 4, 9).unwrap();
        assert_eq!(a, b);
    }
    let last = checkpoint::load(&dir.path().join("last.ckpt")).unwrap().0;
    let batch = collate::<f32>(&d.val.samples[..3], None).unwrap();
    assert_eq!(last.predict(&batch).unwrap(), m.predict(&batch).unwrap());
}

#[test]
fn evaluation_ignores_batch_size() {
    let d = data(3);
    let mut m = LipReader::<f32>::new(spec(3), 5).unwrap();
    fit(&mut m, &d, &train_cfg(), 5, None).unwrap();
    let a = evaluate(&m, &d.test, 3, Some(14), 1, 11).unwrap();
    let b = evaluate(&m, &d.test, 3, Some(14), 6, 11).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert!((a.loss - b.loss).abs() < 1e-9);
}

#[test]
fn hard_pretraining_runs_every_phase() {
    let d = data(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        hard_pretrain: Some(HardPretrainConfig {
            fraction: 0.5,
            pilot_epochs: 1,
            pretrain_epochs: 1,
        }),
        ..train_cfg()
    };
    let mut m = LipReader::<f32>::new(spec(4), 6).unwrap();
    let out = fit(&mut m, &d, &cfg, 6, Some(dir.path())).unwrap();
    let hard = out.hard_classes.unwrap();
    assert_eq!(hard.len(), 2);
    assert_eq!(out.pilot_records.len(), 2);
    assert_eq!(out.pretrain_records.len(), 2);
    assert_eq!(out.records.len(), 4);
    assert_eq!(m.num_classes(), 4);
    for f in ["pilot_metrics.csv", "pretrain_metrics.csv", "metrics.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn mismatched_head_is_rejected() {
    let d = data(3);
    let mut m = LipReader::<f32>::new(spec(2), 1).unwrap();
    assert!(fit(&mut m, &d, &train_cfg(), 1, None).is_err());
}
