use rand::Rng as _;

use super::{Batch, Model};
use crate::autodiff::Tape;
use crate::config::{ArchConfig, Variant};
use crate::error::Result;
use crate::geometry::{Point, PointCloud};
use crate::rng::{tags, SeedStream};

/// Worst disagreement found by [`gradcheck_model`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// A miniature cls3 instance: two random clouds of 16 points with normals,
/// 4 neighbors, 4 channels per layer. Every parameter gets a small random
/// shift so zero-initialized biases do not sit exactly on a ReLU kink.
pub fn gradcheck_fixture(seed: u64) -> Result<(Model, Batch)> {
    let cfg = ArchConfig {
        channels: vec![4, 4, 4],
        neighbors: 4,
        head: vec![8, 6],
        num_classes: 3,
        ..ArchConfig::defaults(Variant::Cls3)
    };
    let mut model = Model::build(&cfg, seed)?;
    let mut rng = SeedStream::new(seed).child(tags::DATA).rng();
    for t in model.params.values_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let clouds = (0..2)
        .map(|label| {
            let pts: Vec<Point> = (0..16)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect();
            let normals = (0..16)
                .map(|_| {
                    let v: Point = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0.5..1.0),
                    ];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    [v[0] / n, v[1] / n, v[2] / n]
                })
                .collect();
            Ok(PointCloud::new(pts)?
                .with_normals(normals)?
                .with_class(label))
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = model.make_batch(&clouds)?;
    Ok((model, batch))
}

fn train_loss(model: &mut Model, batch: &Batch, seed: u64) -> Result<f64> {
    let saved = model.bn.clone();
    let mut tape = Tape::new();
    let fwd = model.forward(&mut tape, batch, true, &mut SeedStream::new(seed).rng())?;
    let loss = model.loss(&mut tape, &fwd, batch)?;
    model.bn = saved;
    Ok(tape.value(loss).data()[0])
}

/// Central finite differences of the train-mode loss against the tape
/// gradient, for every scalar parameter. Dropout masks are held fixed.
pub fn gradcheck_model(model: &mut Model, batch: &Batch, h: f64) -> Result<GradReport> {
    const DROPOUT_SEED: u64 = 11;
    let saved = model.bn.clone();
    let mut tape = Tape::new();
    let fwd = model.forward(
        &mut tape,
        batch,
        true,
        &mut SeedStream::new(DROPOUT_SEED).rng(),
    )?;
    let loss = model.loss(&mut tape, &fwd, batch)?;
    model.bn = saved;
    let grads = tape.backward(loss)?;
    let analytic: Vec<_> = fwd
        .params
        .vars()
        .iter()
        .zip(model.params.values())
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = model.params.values()[pi].data()[i];
            model.params.values_mut()[pi].data_mut()[i] = orig + h;
            let up = train_loss(model, batch, DROPOUT_SEED)?;
            model.params.values_mut()[pi].data_mut()[i] = orig - h;
            let down = train_loss(model, batch, DROPOUT_SEED)?;
            model.params.values_mut()[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{}[{i}]", model.params.names()[pi]);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
