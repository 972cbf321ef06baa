//! Mini-batch training of one schedule stage.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{info_nce_loss, sts_loss, Adam, StageData, StageKind, TrainConfig};
use crate::encoder::{Forward, Gradients, NgramEncoder};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: usize,
    pub kind: StageKind,
    pub epochs: Vec<EpochLoss>,
}

fn batches(order: &[usize], batch_size: usize, min_batch: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min_batch) {
        // fold a too-small tail into the previous batch
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

fn min_batch(kind: StageKind) -> usize {
    match kind {
        StageKind::Lord => 2,
        StageKind::Sts => 1,
    }
}

fn forward_all(state: &NgramEncoder, texts: &[&str]) -> Result<Vec<Forward>> {
    texts.par_iter().map(|t| state.forward(t)).collect()
}

fn rows_of(fwds: &[Forward]) -> Matrix {
    let rows: Vec<Vec<f64>> = fwds.iter().map(|f| f.output.clone()).collect();
    Matrix::from_rows(&rows)
}

/// Loss of one batch and, when requested, the parameter gradients.
fn batch_loss(
    state: &NgramEncoder,
    data: &StageData,
    batch: &[usize],
    config: &TrainConfig,
    with_grads: bool,
) -> Result<(f64, Option<Gradients>)> {
    let (texts_a, texts_b): (Vec<&str>, Vec<&str>) = match data {
        StageData::Pairs(p) => batch
            .iter()
            .map(|&i| (p[i].text_a.as_str(), p[i].text_b.as_str()))
            .unzip(),
        StageData::Sts(s) => batch
            .iter()
            .map(|&i| (s[i].text_a.as_str(), s[i].text_b.as_str()))
            .unzip(),
    };
    let fwd_a = forward_all(state, &texts_a)?;
    let fwd_b = forward_all(state, &texts_b)?;
    let dim = state.config().dim;

    let (loss, grad_a, grad_b) = match data {
        StageData::Pairs(_) => {
            let out = info_nce_loss(&rows_of(&fwd_a), &rows_of(&fwd_b), config.temperature)?;
            (out.loss, out.grad_a, out.grad_b)
        }
        StageData::Sts(s) => {
            let cos: Vec<f64> = fwd_a.iter().zip(&fwd_b).map(|(a, b)| dot(&a.output, &b.output)).collect();
            let gold: Vec<f64> = batch.iter().map(|&i| s[i].gold_score).collect();
            let out = sts_loss(&cos, &gold)?;
            let mut ga = Matrix::zeros(batch.len(), dim);
            let mut gb = Matrix::zeros(batch.len(), dim);
            for (i, g) in out.grad.iter().enumerate() {
                for k in 0..dim {
                    ga.set(i, k, g * fwd_b[i].output[k]);
                    gb.set(i, k, g * fwd_a[i].output[k]);
                }
            }
            (out.loss, ga, gb)
        }
    };
    if !with_grads {
        return Ok((loss, None));
    }
    let mut grads = Gradients::zeros(dim);
    for (i, (fa, fb)) in fwd_a.iter().zip(&fwd_b).enumerate() {
        state.backward(fa, grad_a.row(i), &mut grads);
        state.backward(fb, grad_b.row(i), &mut grads);
    }
    Ok((loss, Some(grads)))
}

fn check_kind(data: &StageData, config: &TrainConfig) -> Result<StageKind> {
    let kind = data.kind();
    config.validate(kind)?;
    if data.len() < min_batch(kind) {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} stage needs at least {} examples, got {}",
            min_batch(kind),
            data.len()
        )));
    }
    Ok(kind)
}

fn diverged(stage: usize, epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged {
            stage,
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Mean batch loss over the data in stored order, without updating.
pub fn evaluate_loss(state: &NgramEncoder, data: &StageData, config: &TrainConfig) -> Result<f64> {
    let kind = check_kind(data, config)?;
    let order: Vec<usize> = (0..data.len()).collect();
    let batches = batches(&order, config.batch_size, min_batch(kind));
    let mut total = 0.0;
    for b in &batches {
        total += batch_loss(state, data, b, config, false)?.0;
    }
    Ok(total / batches.len() as f64)
}

/// Trains for `config.epochs` passes of seeded-shuffle mini-batch Adam.
///
/// The report's first entry (epoch 0) is the loss before training; later
/// entries are the mean training loss of each epoch.
pub fn train_stage(
    mut state: NgramEncoder,
    data: &StageData,
    config: &TrainConfig,
    stage: usize,
) -> Result<(NgramEncoder, StageReport)> {
    let kind = check_kind(data, config)?;
    let initial = evaluate_loss(&state, data, config).map_err(diverged(stage, 0, 0))?;
    if !initial.is_finite() {
        return Err(Error::Diverged {
            stage,
            epoch: 0,
            batch: 0,
            loss: initial,
        });
    }
    let mut epochs = vec![EpochLoss {
        epoch: 0,
        loss: initial,
    }];

    let mut rng = rng_for(config.seed);
    let mut adam = Adam::new(state.config().dim, config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let batches = batches(&order, config.batch_size, min_batch(kind));
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let (loss, grads) =
                batch_loss(&state, data, batch, config, true).map_err(diverged(stage, epoch, bi))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage,
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            total += loss;
            adam.apply(&mut state, &grads.expect("gradients requested"));
        }
        let mean = total / batches.len() as f64;
        log::info!("stage {stage} ({kind:?}) epoch {epoch}: loss {mean:.6}");
        epochs.push(EpochLoss { epoch, loss: mean });
    }
    Ok((state, StageReport { stage, kind, epochs }))
}
