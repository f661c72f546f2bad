//! Training loop, evaluation and the hard-class pretraining schedule.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::checkpoint;
use crate::data::{
    collate, random_frame_drop, spatial_augment, variable_length_crop, Dataset, SequenceSample,
    SplitDatasets,
};
use crate::error::{Error, Result};
use crate::model::LipReader;
use crate::nn::{cross_entropy, Forward, Mode};
use crate::rng::{derive_seed, indexed_stream, stream};
use crate::train::{epoch_lr, hard_class_select, metrics, Adam, AdamConfig, MetricsRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardPretrainConfig {
    /// Share of classes (rounded up) used for pretraining.
    pub fraction: f64,
    /// Epochs of the pilot run that ranks classes by validation accuracy.
    pub pilot_epochs: usize,
    pub pretrain_epochs: usize,
}

impl Default for HardPretrainConfig {
    fn default() -> Self {
        HardPretrainConfig {
            fraction: 0.1,
            pilot_epochs: 10,
            pretrain_epochs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Square crop side; `None` feeds whole frames.
    pub crop_size: Option<usize>,
    pub flip_prob: f64,
    /// Random temporal crops that keep the target interval.
    pub variable_length: bool,
    pub hard_pretrain: Option<HardPretrainConfig>,
    pub eval_batch_size: usize,
    /// Write elapsed seconds to the metrics file. Off by default so that
    /// repeated runs produce identical files.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 32,
            lr_max: 3e-4,
            lr_min: 0.0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            crop_size: Some(32),
            flip_prob: 0.5,
            variable_length: false,
            hard_pretrain: None,
            eval_batch_size: 64,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval_batch_size", "must be positive"));
        }
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) {
            return Err(Error::config("lr_max", "must be positive"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::config("lr_min", "must lie in [0, lr_max]"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.crop_size == Some(0) {
            return Err(Error::config("crop_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::config("flip_prob", "must lie in [0, 1]"));
        }
        if let Some(h) = &self.hard_pretrain {
            if !(h.fraction > 0.0 && h.fraction <= 1.0) {
                return Err(Error::config(
                    "hard_pretrain.fraction",
                    "must lie in (0, 1]",
                ));
            }
            if h.pilot_epochs == 0 || h.pretrain_epochs == 0 {
                return Err(Error::config(
                    "hard_pretrain",
                    "pilot and pretrain epochs must be positive",
                ));
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
}

impl EvalResult {
    /// Per-class accuracy; a class without samples counts as 1.
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.per_class
            .iter()
            .map(|&(c, n)| if n == 0 { 1.0 } else { c as f64 / n as f64 })
            .collect()
    }
}

/// Scores a model on `data` after dropping `drop_frames` random frames from
/// every clip. Clip `i` draws its drops from its own sub-stream of `seed`,
/// so the result does not depend on the batch size.
pub fn evaluate(
    model: &LipReader<f32>,
    data: &Dataset,
    drop_frames: usize,
    crop: Option<usize>,
    batch_size: usize,
    seed: u64,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("evaluate", "batch size must be positive"));
    }
    let k = model.num_classes();
    let mut per_class = vec![(0, 0); k];
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    for (b, chunk) in data.samples.chunks(batch_size).enumerate() {
        let mut clips = Vec::with_capacity(chunk.len());
        for (j, s) in chunk.iter().enumerate() {
            let i = b * batch_size + j;
            let mut rng = indexed_stream(seed, "eval", i as u64);
            let mut c = random_frame_drop(s, drop_frames, &mut rng)?;
            if let Some(size) = crop {
                c = spatial_augment(&c, size, 0.0, false, &mut rng)?;
            }
            clips.push(c);
        }
        let batch = collate::<f32>(&clips, None)?;
        let logits = model.predict(&batch)?;
        loss_sum += batch_loss(&logits.cast(), &batch.labels)? * chunk.len() as f64;
        for (row, &label) in logits.data().chunks(k).zip(&batch.labels) {
            if label >= k {
                return Err(Error::invalid(
                    "evaluate",
                    format!("label {label} outside {k} classes"),
                ));
            }
            let pred = argmax(row);
            predictions.push(pred);
            per_class[label].1 += 1;
            if pred == label {
                per_class[label].0 += 1;
            }
        }
    }
    let correct: usize = per_class.iter().map(|c| c.0).sum();
    Ok(EvalResult {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        per_class,
    })
}

fn batch_loss(logits: &crate::tensor::Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    let x = tape.constant(logits.clone());
    let loss = cross_entropy(x, labels)?.value().item();
    Ok(loss)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// What a training run produced.
#[derive(Clone, Debug)]
pub struct FitOutput {
    /// Metrics of the main phase.
    pub records: Vec<MetricsRecord>,
    pub pilot_records: Vec<MetricsRecord>,
    pub pretrain_records: Vec<MetricsRecord>,
    pub hard_classes: Option<Vec<usize>>,
    /// Epoch index (from 0) with the highest validation accuracy.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub final_val_acc: f64,
    pub best: LipReader<f32>,
}

struct Phase<'a> {
    name: &'static str,
    epochs: usize,
    train: &'a Dataset,
    val: &'a Dataset,
    seed: u64,
}

struct PhaseResult {
    records: Vec<MetricsRecord>,
    best_epoch: usize,
    best_val_acc: f64,
    final_val_acc: f64,
    best: LipReader<f32>,
}

/// Trains `model` in place. With hard-class pretraining enabled, a pilot
/// model first ranks classes by validation accuracy, `model` is pretrained
/// on the hardest ones with a matching head, and then its head is reset to
/// all classes for the main phase.
///
/// When `out` is given, `metrics.csv` (plus `pilot_metrics.csv` and
/// `pretrain_metrics.csv` when used), `best.ckpt` and `last.ckpt` are
/// written there.
pub fn fit(
    model: &mut LipReader<f32>,
    data: &SplitDatasets,
    cfg: &TrainConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<FitOutput> {
    cfg.validate()?;
    let k = data.train.num_classes;
    if model.num_classes() != k {
        return Err(Error::config(
            "num_classes",
            format!(
                "model has {} outputs but the data has {k} classes",
                model.num_classes()
            ),
        ));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::config(
            "dataset",
            "train and val splits must be non-empty",
        ));
    }
    let mut pilot_records = Vec::new();
    let mut pretrain_records = Vec::new();
    let mut hard_classes = None;

    if let Some(h) = &cfg.hard_pretrain {
        let mut pilot = LipReader::<f32>::new(model.spec.clone(), derive_seed(seed, "pilot"))?;
        let phase = Phase {
            name: "pilot",
            epochs: h.pilot_epochs,
            train: &data.train,
            val: &data.val,
            seed,
        };
        let r = run_phase(&mut pilot, &phase, cfg, out)?;
        let per_class = evaluate(
            &pilot,
            &data.val,
            0,
            cfg.crop_size,
            cfg.eval_batch_size,
            seed,
        )?
        .per_class_accuracy();
        let chosen = hard_class_select(&per_class, h.fraction)?;
        pilot_records = r.records;

        let mut head_rng = stream(seed, "init/pretrain-head");
        model.reset_head(chosen.len(), &mut head_rng);
        let (sub_train, sub_val) = (
            data.train.subset_classes(&chosen),
            data.val.subset_classes(&chosen),
        );
        let phase = Phase {
            name: "pretrain",
            epochs: h.pretrain_epochs,
            train: &sub_train,
            val: &sub_val,
            seed,
        };
        pretrain_records = run_phase(model, &phase, cfg, out)?.records;
        let mut head_rng = stream(seed, "init/full-head");
        model.reset_head(k, &mut head_rng);
        hard_classes = Some(chosen);
    }

    let phase = Phase {
        name: "full",
        epochs: cfg.epochs,
        train: &data.train,
        val: &data.val,
        seed,
    };
    let r = run_phase(model, &phase, cfg, out)?;
    Ok(FitOutput {
        records: r.records,
        pilot_records,
        pretrain_records,
        hard_classes,
        best_epoch: r.best_epoch,
        best_val_acc: r.best_val_acc,
        final_val_acc: r.final_val_acc,
        best: r.best,
    })
}

fn run_phase(
    model: &mut LipReader<f32>,
    phase: &Phase,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<PhaseResult> {
    let mut opt = Adam::new(cfg.adam(), &model.store);
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, LipReader<f32>)> = None;
    let mut final_val_acc = 0.0;
    let csv_name = match phase.name {
        "full" => "metrics.csv".to_string(),
        other => format!("{other}_metrics.csv"),
    };
    let started = Instant::now();
    for epoch in 0..phase.epochs {
        let lr = epoch_lr(epoch, phase.epochs, cfg.lr_max, cfg.lr_min)?;
        let (loss, acc) = train_epoch(model, &mut opt, phase, cfg, epoch, lr)?;
        let seconds = if cfg.record_wall_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let val = evaluate(
            model,
            phase.val,
            0,
            cfg.crop_size,
            cfg.eval_batch_size,
            phase.seed,
        )?;
        final_val_acc = val.accuracy;
        for (split, loss, acc) in [("train", loss, acc), ("val", val.loss, val.accuracy)] {
            records.push(MetricsRecord {
                epoch,
                split: split.to_string(),
                loss,
                acc,
                lr,
                seconds,
            });
        }
        let improved = best.as_ref().is_none_or(|b| val.accuracy > b.1);
        if improved {
            best = Some((epoch, val.accuracy, model.clone()));
        }
        if let Some(dir) = out {
            metrics::write_csv(&dir.join(&csv_name), &records)?;
            if phase.name == "full" {
                let meta = |e: usize, acc: f64| serde_json::json!({"epoch": e, "val_acc": acc, "seed": phase.seed, "train": cfg});
                if improved {
                    checkpoint::save(&dir.join("best.ckpt"), model, meta(epoch, val.accuracy))?;
                }
                checkpoint::save(&dir.join("last.ckpt"), model, meta(epoch, val.accuracy))?;
            }
        }
    }
    let (best_epoch, best_val_acc, best) = best.expect("at least one epoch");
    Ok(PhaseResult {
        records,
        best_epoch,
        best_val_acc,
        final_val_acc,
        best,
    })
}

/// One pass over the shuffled training set. Returns mean loss and accuracy.
fn train_epoch(
    model: &mut LipReader<f32>,
    opt: &mut Adam<f32>,
    phase: &Phase,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<(f64, f64)> {
    let tag = |what: &str| format!("{what}/{}", phase.name);
    let mut order_rng = indexed_stream(phase.seed, &tag("shuffle"), epoch as u64);
    let mut aug_rng = indexed_stream(phase.seed, &tag("augment"), epoch as u64);
    let mut drop_rng = indexed_stream(phase.seed, &tag("dropout"), epoch as u64);
    let mut order: Vec<usize> = (0..phase.train.len()).collect();
    order.shuffle(&mut order_rng);

    let (mut loss_sum, mut correct) = (0.0, 0usize);
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let mut clips: Vec<SequenceSample> = Vec::with_capacity(idx.len());
        for &i in idx {
            let mut c = phase.train.samples[i].clone();
            if cfg.variable_length {
                c = variable_length_crop(&c, &mut aug_rng);
            }
            if let Some(size) = cfg.crop_size {
                c = spatial_augment(&c, size, cfg.flip_prob, true, &mut aug_rng)?;
            }
            clips.push(c);
        }
        let batch = collate::<f32>(&clips, None)?;

        let tape = Tape::new();
        let LipReader { store, net, .. } = &mut *model;
        let params = store.attach(&tape);
        let mut ctx = Forward {
            tape: &tape,
            params: &params,
            stats: store.stats_mut(),
            mode: Mode::Train,
            rng: &mut drop_rng,
        };
        let x = tape.constant(batch.frames.clone());
        let logits = net.logits(&mut ctx, x, Some(&batch.mask))?;
        let loss = cross_entropy(logits, &batch.labels)?;
        let loss_value = loss.value().item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: b,
                lr,
            });
        }
        let k = logits.shape()[1];
        for (row, &label) in logits.value().data().chunks(k).zip(&batch.labels) {
            correct += usize::from(argmax(row) == label);
        }
        let mut grads = loss.backward()?;
        let grads = store.collect_grads(&params, &mut grads);
        opt.update(store, &grads, lr)?;
        loss_sum += loss_value * idx.len() as f64;
    }
    let n = phase.train.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}
