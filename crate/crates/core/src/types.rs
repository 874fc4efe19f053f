//! Shared data model: embedding sets, class spaces, paradigm settings and
//! the deterministic split/shot samplers.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on stored row norms.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Fraction of classes that are seen in a transductive zero-shot split,
/// expressed as a percentage so the split size is exact integer arithmetic.
const SEEN_PERCENT: usize = 62;

pub fn unit_normalize(v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(v.mapv(|x| x / norm))
}

/// Normalizes every row of `m` in place.
pub fn normalize_rows(m: &mut Array2<f64>) -> Result<()> {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(())
}

fn check_unit_rows(m: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidInput(format!(
                "{what} row {i} has norm {norm}, expected unit length"
            )));
        }
    }
    Ok(())
}

/// Unit-normalized image features with optional labels and stable ids.
///
/// A label of `None` marks an unlabeled row; on disk it is written as `-1`.
/// Rows whose ground truth is known keep it here even when a paradigm hides
/// it from training; the wiring in [`crate::strategy`] decides visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    ids: Vec<u64>,
    num_classes: usize,
    row_of: HashMap<u64, usize>,
}

impl EmbeddingSet {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        ids: Vec<u64>,
        num_classes: usize,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::InvalidInput("embedding set is empty".into()));
        }
        if d < 2 {
            return Err(Error::InvalidInput(format!("feature dimension {d} < 2")));
        }
        if labels.len() != n || ids.len() != n {
            return Err(Error::InvalidInput(format!(
                "{n} rows but {} labels and {} ids",
                labels.len(),
                ids.len()
            )));
        }
        check_unit_rows(features.view(), "feature")?;
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        let mut row_of = HashMap::with_capacity(n);
        for (row, &id) in ids.iter().enumerate() {
            if row_of.insert(id, row).is_some() {
                return Err(Error::InvalidInput(format!("duplicate id {id}")));
            }
        }
        Ok(Self {
            features,
            labels,
            ids,
            num_classes,
            row_of,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.row_of.get(&id).copied()
    }

    pub fn label_of(&self, id: u64) -> Option<usize> {
        self.row_of(id).and_then(|r| self.labels[r])
    }

    /// Map from example id to ground-truth class for every labeled row.
    pub fn truth(&self) -> HashMap<u64, usize> {
        self.ids
            .iter()
            .zip(&self.labels)
            .filter_map(|(&id, l)| l.map(|c| (id, c)))
            .collect()
    }

    /// Copy of the selected rows, preserving ids and labels.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let features = self.features.select(ndarray::Axis(0), rows);
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        let ids = rows.iter().map(|&r| self.ids[r]).collect();
        Self::new(features, labels, ids, self.num_classes)
    }
}

/// Seen/unseen class partition for transductive zero-shot learning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl Partition {
    pub fn new(mut seen: Vec<usize>, mut unseen: Vec<usize>, num_classes: usize) -> Result<Self> {
        seen.sort_unstable();
        unseen.sort_unstable();
        if seen.is_empty() || unseen.is_empty() {
            return Err(Error::InvalidInput(
                "seen and unseen class sets must be non-empty".into(),
            ));
        }
        let all: BTreeSet<usize> = seen.iter().chain(&unseen).copied().collect();
        if all.len() != seen.len() + unseen.len()
            || all.len() != num_classes
            || all.iter().next_back() != Some(&(num_classes - 1))
        {
            return Err(Error::InvalidInput(format!(
                "seen/unseen must partition [0, {num_classes})"
            )));
        }
        Ok(Self { seen, unseen })
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen.binary_search(&class).is_ok()
    }

    pub fn is_unseen(&self, class: usize) -> bool {
        self.unseen.binary_search(&class).is_ok()
    }
}

/// Class names plus the zero-shot class embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpace {
    names: Vec<String>,
    base_prototypes: Array2<f64>,
    partition: Option<Partition>,
}

impl ClassSpace {
    pub fn new(names: Vec<String>, base_prototypes: Array2<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidInput("class space is empty".into()));
        }
        if names.len() != base_prototypes.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} class names but {} prototypes",
                names.len(),
                base_prototypes.nrows()
            )));
        }
        check_unit_rows(base_prototypes.view(), "prototype")?;
        Ok(Self {
            names,
            base_prototypes,
            partition: None,
        })
    }

    pub fn with_partition(mut self, partition: Partition) -> Result<Self> {
        let p = Partition::new(partition.seen, partition.unseen, self.num_classes())?;
        self.partition = Some(p);
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn base_prototypes(&self) -> ArrayView2<'_, f64> {
        self.base_prototypes.view()
    }

    pub fn partition(&self) -> Option<&Partition> {
        self.partition.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn dim(&self) -> usize {
        self.base_prototypes.ncols()
    }

    pub fn all_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    #[serde(rename = "SSL")]
    SemiSupervised,
    #[serde(rename = "UL")]
    Unsupervised,
    #[serde(rename = "TRZSL")]
    TransductiveZeroShot,
    #[serde(rename = "SL")]
    Supervised,
}

impl Paradigm {
    pub fn tag(self) -> &'static str {
        match self {
            Paradigm::SemiSupervised => "SSL",
            Paradigm::Unsupervised => "UL",
            Paradigm::TransductiveZeroShot => "TRZSL",
            Paradigm::Supervised => "SL",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SSL" => Ok(Paradigm::SemiSupervised),
            "UL" => Ok(Paradigm::Unsupervised),
            "TRZSL" => Ok(Paradigm::TransductiveZeroShot),
            "SL" => Ok(Paradigm::Supervised),
            other => Err(Error::InvalidInput(format!("unknown paradigm {other:?}"))),
        }
    }
}

/// Weights on the labeled and pseudolabeled cross-entropy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda: f64,
}

/// A paradigm together with its labeled-shot budget and frozen loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParadigmConfig {
    pub paradigm: Paradigm,
    pub shots_per_class: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl ParadigmConfig {
    /// Builds the config for concrete pool sizes, computing γ/λ once.
    pub fn for_pools(
        paradigm: Paradigm,
        shots_per_class: usize,
        n_labeled: usize,
        n_pseudo: usize,
    ) -> Result<Self> {
        let LossWeights { gamma, lambda } = paradigm_weights(paradigm, n_labeled, n_pseudo)?;
        Ok(Self {
            paradigm,
            shots_per_class,
            gamma,
            lambda,
        })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            lambda: self.lambda,
        }
    }
}

/// Training rows, held-out test rows and their shared class space.
#[derive(Debug, Clone)]
pub struct Task {
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    pub space: ClassSpace,
}

/// Rows of an [`EmbeddingSet`] used as labeled training data.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledSubset {
    pub rows: Vec<usize>,
    pub labels: Vec<usize>,
}

impl LabeledSubset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Random 62/38 seen/unseen split of `num_classes` classes.
pub fn make_trzsl_split(num_classes: usize, seed: u64) -> Result<Partition> {
    if num_classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes for a seen/unseen split, got {num_classes}"
        )));
    }
    let n_seen = SEEN_PERCENT * num_classes / 100;
    let mut classes: Vec<usize> = (0..num_classes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    let unseen = classes.split_off(n_seen);
    Partition::new(classes, unseen, num_classes)
}

/// Samples exactly `shots` labeled rows per requested class without replacement.
pub fn sample_shots(
    set: &EmbeddingSet,
    shots: usize,
    classes: &[usize],
    seed: u64,
) -> Result<LabeledSubset> {
    let mut by_class: HashMap<usize, Vec<usize>> = HashMap::new();
    for (row, label) in set.labels().iter().enumerate() {
        if let Some(c) = label {
            by_class.entry(*c).or_default().push(row);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LabeledSubset::default();
    if shots == 0 {
        return Ok(out);
    }
    let mut ordered = classes.to_vec();
    ordered.sort_unstable();
    ordered.dedup();
    for class in ordered {
        let rows = by_class.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        if rows.len() < shots {
            return Err(Error::InsufficientShots {
                class,
                available: rows.len(),
                requested: shots,
            });
        }
        let mut picked: Vec<usize> = index::sample(&mut rng, rows.len(), shots)
            .into_iter()
            .map(|i| rows[i])
            .collect();
        picked.sort_unstable();
        out.labels.extend(std::iter::repeat_n(class, picked.len()));
        out.rows.extend(picked);
    }
    Ok(out)
}

/// Loss weights (γ, λ) for a paradigm given the labeled and pseudolabeled set sizes.
pub fn paradigm_weights(paradigm: Paradigm, n_labeled: usize, n_pseudo: usize) -> Result<LossWeights> {
    let (gamma, lambda) = match paradigm {
        Paradigm::SemiSupervised => {
            if n_labeled == 0 {
                return Err(Error::ZeroWeightDenominator("SSL needs labeled data"));
            }
            (n_pseudo as f64 / n_labeled as f64, 1.0)
        }
        Paradigm::TransductiveZeroShot => {
            if n_pseudo == 0 {
                return Err(Error::ZeroWeightDenominator("TRZSL needs pseudolabels"));
            }
            (1.0, n_labeled as f64 / n_pseudo as f64)
        }
        Paradigm::Unsupervised => {
            if n_labeled != 0 {
                return Err(Error::InvalidInput("UL cannot have labeled data".into()));
            }
            (0.0, 1.0)
        }
        Paradigm::Supervised => {
            if n_pseudo != 0 {
                return Err(Error::InvalidInput("SL cannot have pseudolabels".into()));
            }
            (1.0, 0.0)
        }
    };
    Ok(LossWeights { gamma, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_set(per_class: usize, classes: usize) -> EmbeddingSet {
        let n = per_class * classes;
        let mut f = Array2::zeros((n, 2));
        let mut labels = Vec::new();
        for i in 0..n {
            let a = i as f64 * 0.1;
            f[[i, 0]] = a.cos();
            f[[i, 1]] = a.sin();
            labels.push(Some(i % classes));
        }
        EmbeddingSet::new(f, labels, (0..n as u64).collect(), classes).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = unit_normalize(array![3.0, 4.0].view()).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        let v = unit_normalize(array![1.0, 0.0, 0.0].view()).unwrap();
        assert_eq!(v, array![1.0, 0.0, 0.0]);
        assert!(matches!(
            unit_normalize(array![0.0, 0.0].view()),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn split_sizes() {
        for (c, seen) in [(45, 27), (102, 63), (10, 6)] {
            let p = make_trzsl_split(c, 3).unwrap();
            assert_eq!(p.seen.len(), seen);
            assert_eq!(p.unseen.len(), c - seen);
        }
        assert!(make_trzsl_split(1, 0).is_err());
    }

    #[test]
    fn shots() {
        let set = toy_set(10, 5);
        let s = sample_shots(&set, 2, &[0, 1, 2, 3, 4], 9).unwrap();
        assert_eq!(s.len(), 10);
        for c in 0..5 {
            assert_eq!(s.labels.iter().filter(|&&l| l == c).count(), 2);
        }
        for (&r, &l) in s.rows.iter().zip(&s.labels) {
            assert_eq!(set.labels()[r], Some(l));
        }
        assert!(sample_shots(&set, 0, &[0, 1], 9).unwrap().is_empty());
        let small = toy_set(2, 3);
        match sample_shots(&small, 3, &[0, 1, 2], 0) {
            Err(Error::InsufficientShots { class: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weights() {
        let w = paradigm_weights(Paradigm::SemiSupervised, 20, 160).unwrap();
        assert_eq!((w.gamma, w.lambda), (8.0, 1.0));
        let w = paradigm_weights(Paradigm::TransductiveZeroShot, 126, 624).unwrap();
        assert_eq!(w.gamma, 1.0);
        assert!((w.lambda - 0.201_923_076_923).abs() < 1e-9);
        let w = paradigm_weights(Paradigm::Unsupervised, 0, 160).unwrap();
        assert_eq!((w.gamma, w.lambda), (0.0, 1.0));
        let w = paradigm_weights(Paradigm::Supervised, 50, 0).unwrap();
        assert_eq!((w.gamma, w.lambda), (1.0, 0.0));
        assert!(matches!(
            paradigm_weights(Paradigm::SemiSupervised, 0, 10),
            Err(Error::ZeroWeightDenominator(_))
        ));
        assert!(matches!(
            paradigm_weights(Paradigm::TransductiveZeroShot, 10, 0),
            Err(Error::ZeroWeightDenominator(_))
        ));
    }

    #[test]
    fn set_invariants() {
        let f = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(EmbeddingSet::new(f.clone(), vec![None, Some(0)], vec![1, 1], 2).is_err());
        assert!(EmbeddingSet::new(f.clone(), vec![None, Some(2)], vec![1, 2], 2).is_err());
        assert!(EmbeddingSet::new(array![[2.0, 0.0]], vec![None], vec![0], 2).is_err());
        let s = EmbeddingSet::new(f, vec![None, Some(1)], vec![7, 9], 2).unwrap();
        assert_eq!(s.row_of(9), Some(1));
        assert_eq!(s.label_of(7), None);
    }

    #[test]
    fn partition_checks() {
        assert!(Partition::new(vec![0, 1], vec![2], 3).is_ok());
        assert!(Partition::new(vec![0, 1], vec![1, 2], 3).is_err());
        assert!(Partition::new(vec![0, 1, 2], vec![], 3).is_err());
        assert!(Partition::new(vec![0], vec![2], 3).is_err());
    }
}
