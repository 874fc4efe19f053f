//! SGD with momentum on the two-term objective
//! `γ · CE(labeled) + λ · CE(pseudolabeled)` under a warmup + cosine schedule.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classifier, Example};
use crate::pseudolabel::PseudolabelSet;
use crate::types::{ClassSpace, EmbeddingSet, LabeledSubset, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 150,
            warmup_epochs: 5,
            warmup_lr: 1e-4,
            peak_lr: 0.1,
            batch_size: 64,
            momentum: 0.9,
        }
    }
}

impl TrainSchedule {
    pub fn with_peak_lr(self, peak_lr: f64) -> Self {
        Self { peak_lr, ..self }
    }

    /// A zero-epoch schedule is valid and trains nothing.
    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidInput(format!(
                "warmup epochs ({}) must be fewer than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.warmup_lr > 0.0 && self.peak_lr > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Constant warmup rate, then cosine decay from `peak_lr` towards zero.
pub fn lr_at(schedule: &TrainSchedule, epoch: usize) -> Result<f64> {
    if epoch >= schedule.epochs {
        return Err(Error::InvalidInput(format!(
            "epoch {epoch} outside [0, {})",
            schedule.epochs
        )));
    }
    if epoch < schedule.warmup_epochs {
        return Ok(schedule.warmup_lr);
    }
    let progress = (epoch - schedule.warmup_epochs) as f64
        / (schedule.epochs - schedule.warmup_epochs) as f64;
    Ok(schedule.peak_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

pub fn unified_loss(labeled_loss: f64, pseudo_loss: f64, gamma: f64, lambda: f64) -> f64 {
    gamma * labeled_loss + lambda * pseudo_loss
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean unified loss per epoch.
    pub loss_trace: Vec<f64>,
}

struct Pool {
    examples: Vec<(usize, usize)>,
    weight: f64,
}

impl Pool {
    fn batches(&self, batch_size: usize) -> usize {
        self.examples.len().div_ceil(batch_size)
    }
}

/// Positions of `pool`'s `step`-th batch. The pool with the most batches
/// walks its order once with a short final batch; smaller pools wrap around.
fn batch_positions(n: usize, batch_size: usize, step: usize, driver: bool) -> Vec<usize> {
    if driver {
        let start = step * batch_size;
        (start..(start + batch_size).min(n)).collect()
    } else {
        let b = batch_size.min(n);
        (0..b).map(|t| (step * b + t) % n).collect()
    }
}

/// Trains `model` on the labeled rows and pseudolabels of `data`.
///
/// Each step draws one batch from every non-empty pool and combines their
/// mean losses with `weights`. The softmax always spans every class in
/// `space`; `labeled_classes` and `pseudo_classes` only constrain which
/// labels each pool may carry.
#[allow(clippy::too_many_arguments)]
pub fn train<M: Classifier>(
    model: &M,
    data: &EmbeddingSet,
    space: &ClassSpace,
    labeled: &LabeledSubset,
    pseudo: &PseudolabelSet,
    weights: LossWeights,
    schedule: &TrainSchedule,
    labeled_classes: &[usize],
    pseudo_classes: &[usize],
    seed: u64,
) -> Result<TrainOutcome<M>> {
    schedule.validate()?;
    if labeled.is_empty() && pseudo.is_empty() {
        return Err(Error::InvalidInput(
            "training needs labeled data or pseudolabels".into(),
        ));
    }
    let mut labeled_pool = Vec::with_capacity(labeled.len());
    for (&row, &label) in labeled.rows.iter().zip(&labeled.labels) {
        if row >= data.len() {
            return Err(Error::InvalidInput(format!("labeled row {row} out of range")));
        }
        if !labeled_classes.contains(&label) {
            return Err(Error::InvalidInput(format!(
                "labeled class {label} outside the labeled class subset"
            )));
        }
        labeled_pool.push((row, label));
    }
    let mut pseudo_pool = Vec::with_capacity(pseudo.len());
    for e in &pseudo.entries {
        let row = data.row_of(e.example_id).ok_or(Error::UnknownId(e.example_id))?;
        if !pseudo_classes.contains(&e.class_index) {
            return Err(Error::InvalidInput(format!(
                "pseudolabel class {} outside the pseudolabel class subset",
                e.class_index
            )));
        }
        pseudo_pool.push((row, e.class_index));
    }
    let mut pools: Vec<Pool> = [
        Pool {
            examples: labeled_pool,
            weight: weights.gamma,
        },
        Pool {
            examples: pseudo_pool,
            weight: weights.lambda,
        },
    ]
    .into_iter()
    .filter(|p| !p.examples.is_empty() && p.weight != 0.0)
    .collect();
    if pools.is_empty() {
        return Err(Error::InvalidInput(
            "every non-empty pool has zero loss weight".into(),
        ));
    }

    let mut model = model.clone();
    let mut loss_trace = Vec::with_capacity(schedule.epochs);
    if schedule.epochs == 0 {
        return Ok(TrainOutcome { model, loss_trace });
    }
    let support = space.all_classes();
    let mut params = model.params();
    let mut velocity = vec![0.0; params.len()];
    let steps = pools
        .iter()
        .map(|p| p.batches(schedule.batch_size))
        .max()
        .unwrap_or(0);

    for epoch in 0..schedule.epochs {
        let lr = lr_at(schedule, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        for pool in pools.iter_mut() {
            pool.examples.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for step in 0..steps {
            let mut loss = 0.0;
            let mut grad = vec![0.0; params.len()];
            for pool in &pools {
                let n = pool.examples.len();
                let driver = pool.batches(schedule.batch_size) == steps;
                let batch: Vec<Example<'_>> =
                    batch_positions(n, schedule.batch_size, step, driver)
                        .into_iter()
                        .map(|i| {
                            let (row, label) = pool.examples[i];
                            Example {
                                features: data.row(row),
                                label,
                            }
                        })
                        .collect();
                let (l, g) = model
                    .loss_and_grad(&batch, space, &support)
                    .map_err(|e| match e {
                        Error::NumericalOverflow => Error::NonFiniteLoss { epoch, batch: step },
                        other => other,
                    })?;
                loss += pool.weight * l;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += pool.weight * gi;
                }
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: step });
            }
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = schedule.momentum * *v + g;
                *p -= lr * *v;
            }
            model.set_params(&params);
            epoch_loss += loss;
        }
        loss_trace.push(epoch_loss / steps as f64);
    }
    Ok(TrainOutcome { model, loss_trace })
}
