//! Training loop, evaluation metrics and the robustness protocol.

mod data;
mod metrics;

use rand::seq::SliceRandom;

pub use data::{toy_dataset, Split, ToySpec};
pub use metrics::{aggregate_miou, argmax_rows, shape_miou, SegMetrics};

use crate::autodiff::Tape;
use crate::config::{RobustProtocol, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{augment, subsample, PointCloud};
use crate::io::MetricsLog;
use crate::models::{Batch, Model};
use crate::optim::Adam;
use crate::par;
use crate::rng::{tags, SeedStream};

/// Clouds per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub log: MetricsLog,
    /// Loss of the first batch before any update.
    pub initial_loss: f64,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

fn check_dataset(model: &Model, clouds: &[PointCloud], what: &str) -> Result<()> {
    if clouds.is_empty() {
        return Err(Error::invalid(format!("{what} set is empty")));
    }
    if model.cfg.input_channels == 6 && clouds.iter().any(|c| c.normals.is_none()) {
        return Err(Error::invalid(format!(
            "model expects normals; {what} set lacks them"
        )));
    }
    Ok(())
}

/// One forward/backward/Adam step. Returns the batch loss.
fn step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    dropout_seed: SeedStream,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut rng = dropout_seed.rng();
    let fwd = model.forward(&mut tape, batch, true, &mut rng)?;
    let loss = model.loss(&mut tape, &fwd, batch)?;
    if let Some((var, op)) = tape.first_non_finite() {
        return Err(Error::NonFinite(format!(
            "forward tensor #{} ({op})",
            var.index()
        )));
    }
    let mut grads = tape.backward(loss)?;
    let grad_list: Vec<_> = fwd
        .params
        .vars()
        .iter()
        .zip(model.params.values())
        .map(|(&v, value)| {
            grads
                .take(v)
                .unwrap_or_else(|| crate::Tensor::zeros(value.shape()))
        })
        .collect();
    for (g, name) in grad_list.iter().zip(model.params.names()) {
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    adam.step(model.params.values_mut(), &grad_list)?;
    Ok(tape.value(loss).data()[0])
}

/// Trains in place. Shuffling, augmentation and dropout draw from streams
/// derived from `cfg.seed`, so a run is reproducible bit for bit.
pub fn train(
    model: &mut Model,
    train_set: &[PointCloud],
    test_set: Option<&[PointCloud]>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(model, train_set, "training")?;
    let root = SeedStream::new(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut log = MetricsLog::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut root.child(tags::SHUFFLE).child(epoch as u64).rng());
        let aug_root = root.child(tags::AUGMENT).child(epoch as u64);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (bi, ids) in order.chunks(cfg.batch_size).enumerate() {
            let clouds = par::map_slice(ids, |&i| {
                augment(
                    &train_set[i],
                    &cfg.augment,
                    &mut aug_root.child(i as u64).rng(),
                )
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let batch = model.make_batch(&clouds)?;
            if initial_loss.is_none() {
                initial_loss = Some(batch_loss(model, &batch)?);
                log.push(0, "train", "loss", initial_loss.unwrap());
            }
            let dropout = root
                .child(tags::DROPOUT)
                .child(epoch as u64)
                .child(bi as u64);
            let loss = step(model, &mut adam, &batch, dropout)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {} batch {bi}",
                    epoch + 1
                )));
            }
            total += loss * ids.len() as f64;
            seen += ids.len();
        }
        let mean = total / seen as f64;
        epoch_losses.push(mean);
        log.push(epoch + 1, "train", "loss", mean);
        let last = epoch + 1 == cfg.epochs;
        if let Some(test) = test_set {
            if last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
                record_eval(model, test, epoch + 1, &mut log)?;
            }
        }
    }
    Ok(TrainReport {
        log,
        initial_loss: initial_loss.unwrap_or(f64::NAN),
        epoch_losses,
    })
}

/// Eval-mode metrics for `set`, appended to `log` under split `test`.
pub fn record_eval(
    model: &mut Model,
    set: &[PointCloud],
    epoch: usize,
    log: &mut MetricsLog,
) -> Result<()> {
    if model.is_segmenter() {
        let m = evaluate_segmentation(model, set)?;
        log.push(epoch, "test", "miou", m.miou);
        for (cat, v) in &m.per_category {
            log.push(epoch, "test", &format!("miou_cat{cat}"), *v);
        }
    } else {
        log.push(
            epoch,
            "test",
            "accuracy",
            evaluate_classification(model, set)?,
        );
    }
    Ok(())
}

/// Eval-mode loss on one batch, with no parameter update.
pub fn batch_loss(model: &mut Model, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let mut rng = SeedStream::new(0).rng();
    let fwd = model.forward(&mut tape, batch, false, &mut rng)?;
    let loss = model.loss(&mut tape, &fwd, batch)?;
    Ok(tape.value(loss).data()[0])
}

/// Eval-mode logits of every cloud (classifiers) or point (segmenter).
pub fn predict(model: &mut Model, set: &[PointCloud]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for chunk in set.chunks(EVAL_BATCH) {
        let batch = model.make_batch(chunk)?;
        let logits = model.predict(&batch)?;
        out.extend(argmax_rows(logits.data(), logits.shape()[1]));
    }
    Ok(out)
}

/// Fraction of clouds whose argmax logit equals the label.
pub fn evaluate_classification(model: &mut Model, set: &[PointCloud]) -> Result<f64> {
    check_dataset(model, set, "evaluation")?;
    if model.is_segmenter() {
        return Err(Error::invalid("classification accuracy needs a classifier"));
    }
    let labels = set
        .iter()
        .map(|c| {
            c.class_label
                .ok_or_else(|| Error::invalid("unlabeled cloud in evaluation set"))
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = predict(model, set)?;
    let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / set.len() as f64)
}

/// Per-shape mIoU averaged over shapes and per category (the cloud's class label).
pub fn evaluate_segmentation(model: &mut Model, set: &[PointCloud]) -> Result<SegMetrics> {
    check_dataset(model, set, "evaluation")?;
    if !model.is_segmenter() {
        return Err(Error::invalid("mIoU needs a segmenter"));
    }
    let pred = predict(model, set)?;
    let parts = model.cfg.num_classes;
    let mut shapes = Vec::with_capacity(set.len());
    let mut start = 0;
    for c in set {
        let truth = c
            .part_labels
            .as_ref()
            .ok_or_else(|| Error::invalid("cloud without part labels in segmentation set"))?;
        let cat = c
            .class_label
            .ok_or_else(|| Error::invalid("cloud without category"))?;
        if let Some(&bad) = truth.iter().find(|&&t| t >= parts) {
            return Err(Error::invalid(format!("part label {bad} >= {parts}")));
        }
        shapes.push((cat, shape_miou(&pred[start..start + c.len()], truth, parts)));
        start += c.len();
    }
    Ok(aggregate_miou(&shapes))
}

/// Subsamples every cloud to `n` points with a stream keyed by cloud index.
pub fn subsample_set(set: &[PointCloud], n: usize, stream: SeedStream) -> Result<Vec<PointCloud>> {
    set.iter()
        .enumerate()
        .map(|(i, c)| subsample(c, n, &mut stream.child(i as u64).rng()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub size: usize,
    pub accuracy: f64,
}

/// Test accuracy at each input size. `TrainAtSize` trains a fresh model (same
/// architecture, seed `cfg.seed`) on subsampled training clouds per size;
/// `EvalOnly` evaluates `model` on subsampled test clouds.
pub fn robustness_sweep(
    model: &mut Model,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    sizes: &[usize],
    protocol: RobustProtocol,
    cfg: &TrainConfig,
) -> Result<Vec<SweepPoint>> {
    let min_len = test_set.iter().map(PointCloud::len).min().unwrap_or(0);
    if let Some(&bad) = sizes.iter().find(|&&s| s > min_len || s == 0) {
        return Err(Error::invalid(format!(
            "sweep size {bad} outside 1..={min_len}"
        )));
    }
    let sub = SeedStream::new(cfg.seed).child(tags::SUBSAMPLE);
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let stream = sub.child(size as u64);
        let test = subsample_set(test_set, size, stream.child(1))?;
        let accuracy = match protocol {
            RobustProtocol::EvalOnly => evaluate_classification(model, &test)?,
            RobustProtocol::TrainAtSize => {
                let train_small = subsample_set(train_set, size, stream.child(0))?;
                let mut fresh = Model::build(&model.cfg, cfg.seed)?;
                train(&mut fresh, &train_small, None, cfg)?;
                evaluate_classification(&mut fresh, &test)?
            }
        };
        out.push(SweepPoint { size, accuracy });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
