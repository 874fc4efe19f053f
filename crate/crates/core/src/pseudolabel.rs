//! Top-K-per-class pseudolabel assignment over cosine similarities.

use std::cmp::Ordering;
use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pseudolabel {
    pub example_id: u64,
    pub class_index: usize,
    pub score: f64,
}

/// Pseudolabel assignments. An example may appear under several classes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudolabelSet {
    pub entries: Vec<Pseudolabel>,
    /// Number of examples selected per class.
    pub k_used: usize,
}

impl PseudolabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_for(&self, class: usize) -> usize {
        self.entries.iter().filter(|e| e.class_index == class).count()
    }

    /// Keeps one entry per example: the highest-scoring class, lower class
    /// index on ties. Entry order is otherwise preserved.
    pub fn dedup_keep_best(&self) -> PseudolabelSet {
        let mut best: HashMap<u64, (f64, usize)> = HashMap::new();
        for e in &self.entries {
            best.entry(e.example_id)
                .and_modify(|cur| {
                    if e.score > cur.0 || (e.score == cur.0 && e.class_index < cur.1) {
                        *cur = (e.score, e.class_index);
                    }
                })
                .or_insert((e.score, e.class_index));
        }
        let entries = self
            .entries
            .iter()
            .filter(|e| best[&e.example_id].1 == e.class_index)
            .copied()
            .collect();
        PseudolabelSet {
            entries,
            k_used: self.k_used,
        }
    }
}

/// `images · prototypesᵀ`: cosine similarity when both sides are unit rows.
pub fn similarity_matrix(
    images: ArrayView2<'_, f64>,
    prototypes: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if images.ncols() != prototypes.ncols() {
        return Err(Error::DimensionMismatch {
            expected: prototypes.ncols(),
            got: images.ncols(),
        });
    }
    Ok(images.dot(&prototypes.t()))
}

/// Shrinks K when the unlabeled pool cannot supply K examples per class.
/// Never returns less than 1.
pub fn effective_k(requested_k: usize, n_unlabeled: usize, num_classes: usize) -> usize {
    if n_unlabeled < num_classes {
        return 1;
    }
    requested_k.min(n_unlabeled / num_classes).max(1)
}

/// Orders rows by descending score, lower id first on ties.
fn by_score_then_id<'a>(scores: &'a [f64], ids: &'a [u64]) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    }
}

/// Selects, for every class in `class_subset`, the `k` rows most similar to it.
///
/// `similarities` is n×C with row `i` belonging to example `ids[i]`. Entries
/// are emitted class by class in the order of `class_subset`, and within a
/// class by descending score.
pub fn topk_per_class(
    similarities: ArrayView2<'_, f64>,
    k: usize,
    class_subset: &[usize],
    ids: &[u64],
) -> Result<PseudolabelSet> {
    let (n, c) = similarities.dim();
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if class_subset.is_empty() {
        return Err(Error::InvalidInput("class subset is empty".into()));
    }
    if ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ids.len(),
        });
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds the {n} available rows"
        )));
    }
    let mut entries = Vec::with_capacity(k * class_subset.len());
    let mut order: Vec<usize> = (0..n).collect();
    for &class in class_subset {
        if class >= c {
            return Err(Error::InvalidInput(format!(
                "class {class} outside similarity matrix with {c} columns"
            )));
        }
        let column: Vec<f64> = similarities.column(class).to_vec();
        let cmp = by_score_then_id(&column, ids);
        if k < n {
            order.select_nth_unstable_by(k - 1, &cmp);
        }
        order[..k].sort_unstable_by(&cmp);
        entries.extend(order[..k].iter().map(|&row| Pseudolabel {
            example_id: ids[row],
            class_index: class,
            score: column[row],
        }));
    }
    Ok(PseudolabelSet { entries, k_used: k })
}

/// Fraction of pseudolabels that agree with the ground truth.
pub fn pseudolabel_accuracy(pl: &PseudolabelSet, truth: &HashMap<u64, usize>) -> Result<f64> {
    if pl.is_empty() {
        return Err(Error::InvalidInput("empty pseudolabel set".into()));
    }
    let mut correct = 0usize;
    for e in &pl.entries {
        let label = truth
            .get(&e.example_id)
            .ok_or(Error::UnknownId(e.example_id))?;
        if *label == e.class_index {
            correct += 1;
        }
    }
    Ok(correct as f64 / pl.len() as f64)
}
