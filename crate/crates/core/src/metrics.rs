//! Accuracy reports, the seen/unseen harmonic mean and class balance, and
//! the poor/rich per-class delta analysis.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::pseudolabel::{Pseudolabel, PseudolabelSet};
use crate::types::{ClassSpace, EmbeddingSet, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    /// Zero for classes with no test examples.
    pub per_class_accuracy: Vec<f64>,
    pub class_counts: Vec<usize>,
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
    pub harmonic: Option<f64>,
    pub class_balance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobinHoodReport {
    pub poor_classes: Vec<usize>,
    pub rich_classes: Vec<usize>,
    pub baseline_per_class: Vec<f64>,
    pub new_per_class: Vec<f64>,
    /// `None` when the partition side is empty.
    pub mean_delta_poor: Option<f64>,
    pub mean_delta_rich: Option<f64>,
}

/// Index of the first maximum in each row.
pub fn argmax_rows(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Builds a report from predicted and true classes.
pub fn report_from_predictions(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
    partition: Option<&Partition>,
) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let mut counts = vec![0usize; num_classes];
    let mut hits = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::InvalidInput(format!("label {y} out of range")));
        }
        counts[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let per_class_accuracy: Vec<f64> = hits
        .iter()
        .zip(&counts)
        .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect();
    let overall_accuracy = hits.iter().sum::<usize>() as f64 / labels.len() as f64;

    let group = |classes: &[usize]| {
        let n: usize = classes.iter().map(|&c| counts[c]).sum();
        let h: usize = classes.iter().map(|&c| hits[c]).sum();
        (n > 0).then(|| h as f64 / n as f64)
    };
    let (seen_accuracy, unseen_accuracy) = match partition {
        Some(p) => (group(&p.seen), group(&p.unseen)),
        None => (None, None),
    };
    let harmonic = match (seen_accuracy, unseen_accuracy) {
        (Some(s), Some(u)) => Some(harmonic_mean(s, u)),
        _ => None,
    };
    let class_balance = match (seen_accuracy, unseen_accuracy) {
        (Some(s), Some(u)) => class_balance(s, u).ok(),
        _ => None,
    };
    Ok(EvalReport {
        overall_accuracy,
        per_class_accuracy,
        class_counts: counts,
        seen_accuracy,
        unseen_accuracy,
        harmonic,
        class_balance,
    })
}

/// Accuracy of `model` on `test`, predicting over every class in `space`.
/// Seen/unseen fields are filled when `partition_aware` is set and `space`
/// carries a partition.
pub fn evaluate<M: Classifier>(
    model: &M,
    test: &EmbeddingSet,
    space: &ClassSpace,
    partition_aware: bool,
) -> Result<EvalReport> {
    let labels = test
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::InvalidInput(format!("test row {i} is unlabeled"))))
        .collect::<Result<Vec<_>>>()?;
    let scores = model.scores(test.features(), space)?;
    let predictions = argmax_rows(scores.view());
    let partition = if partition_aware {
        space.partition()
    } else {
        None
    };
    report_from_predictions(&predictions, &labels, space.num_classes(), partition)
}

/// `2su / (s + u)`, zero when both are zero.
pub fn harmonic_mean(seen_acc: f64, unseen_acc: f64) -> f64 {
    let sum = seen_acc + unseen_acc;
    if sum == 0.0 {
        0.0
    } else {
        2.0 * seen_acc * unseen_acc / sum
    }
}

/// `(u - s) / s`: zero is balanced, negative favours seen classes.
pub fn class_balance(seen_acc: f64, unseen_acc: f64) -> Result<f64> {
    if seen_acc == 0.0 {
        return Err(Error::UndefinedBalance);
    }
    Ok((unseen_acc - seen_acc) / seen_acc)
}

/// Splits classes into poor (baseline per-class accuracy strictly below the
/// baseline overall accuracy) and rich, and averages the per-class change
/// within each group.
pub fn robin_hood(baseline: &EvalReport, new: &EvalReport) -> Result<RobinHoodReport> {
    let c = baseline.per_class_accuracy.len();
    if new.per_class_accuracy.len() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            got: new.per_class_accuracy.len(),
        });
    }
    let (poor_classes, rich_classes): (Vec<usize>, Vec<usize>) =
        (0..c).partition(|&k| baseline.per_class_accuracy[k] < baseline.overall_accuracy);
    let mean_delta = |classes: &[usize]| {
        (!classes.is_empty()).then(|| {
            classes
                .iter()
                .map(|&k| new.per_class_accuracy[k] - baseline.per_class_accuracy[k])
                .sum::<f64>()
                / classes.len() as f64
        })
    };
    Ok(RobinHoodReport {
        mean_delta_poor: mean_delta(&poor_classes),
        mean_delta_rich: mean_delta(&rich_classes),
        poor_classes,
        rich_classes,
        baseline_per_class: baseline.per_class_accuracy.clone(),
        new_per_class: new.per_class_accuracy.clone(),
    })
}

/// Row-wise softmax of `temperature · scores`.
pub fn softmax_rows(scores: ArrayView2<'_, f64>, temperature: f64) -> Array2<f64> {
    let mut out = scores.mapv(|x| x * temperature);
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Conventional confidence-threshold pseudolabeling: every row whose top
/// class probability exceeds `tau` is labeled with that class. There is no
/// per-class cap; `k_used` reports the largest per-class count.
pub fn threshold_pseudolabels(
    probabilities: ArrayView2<'_, f64>,
    tau: f64,
    ids: &[u64],
) -> Result<PseudolabelSet> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("threshold {tau} outside (0, 1)")));
    }
    if ids.len() != probabilities.nrows() {
        return Err(Error::DimensionMismatch {
            expected: probabilities.nrows(),
            got: ids.len(),
        });
    }
    let best = argmax_rows(probabilities);
    let mut per_class = vec![0usize; probabilities.ncols()];
    let mut entries = Vec::new();
    for ((row, &c), &id) in probabilities.rows().into_iter().zip(&best).zip(ids) {
        if row[c] > tau {
            per_class[c] += 1;
            entries.push(Pseudolabel {
                example_id: id,
                class_index: c,
                score: row[c],
            });
        }
    }
    Ok(PseudolabelSet {
        entries,
        k_used: per_class.into_iter().max().unwrap_or(0),
    })
}

/// Mean and sample standard deviation (n − 1); the deviation is `None` for
/// fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    if values.is_empty() {
        return (f64::NAN, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (mean, std)
}
