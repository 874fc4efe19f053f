//! FPL, IFPL and GRIP training loops and the paradigm wiring that decides
//! which rows are labeled, which are pseudolabeled, and over which classes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{init_prompt, Classifier, FrozenEncoder, PromptConfig, PromptModel};
use crate::optim::{train, TrainSchedule};
use crate::probe::LinearProbe;
use crate::pseudolabel::{effective_k, pseudolabel_accuracy, topk_per_class, PseudolabelSet};
use crate::types::{sample_shots, ClassSpace, EmbeddingSet, LabeledSubset, Paradigm, ParadigmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "FPL")]
    Fpl,
    #[serde(rename = "IFPL")]
    Ifpl,
    #[serde(rename = "GRIP")]
    Grip,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Fpl => "FPL",
            Strategy::Ifpl => "IFPL",
            Strategy::Grip => "GRIP",
        }
    }

    fn needs_unlabeled(self) -> Error {
        Error::Unsupported(match self {
            Strategy::Fpl => "FPL requires unlabeled data",
            Strategy::Ifpl => "IFPL requires unlabeled data",
            Strategy::Grip => "GRIP requires unlabeled data",
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FPL" => Ok(Strategy::Fpl),
            "IFPL" => Ok(Strategy::Ifpl),
            "GRIP" => Ok(Strategy::Grip),
            other => Err(Error::InvalidInput(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Pseudolabels per class for FPL and IFPL.
    pub k: usize,
    /// Number of pseudolabel/train rounds; FPL always runs one.
    pub iterations: usize,
    pub paradigm: Paradigm,
    pub shots_per_class: usize,
    pub schedule: TrainSchedule,
    /// Keep only the best class for examples selected under several classes.
    pub dedup_pseudolabels: bool,
    pub seed: u64,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, paradigm: Paradigm) -> Self {
        Self {
            strategy,
            k: 16,
            iterations: 10,
            paradigm,
            shots_per_class: 2,
            schedule: TrainSchedule::default(),
            dedup_pseudolabels: false,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidInput("iterations must be at least 1".into()));
        }
        self.schedule.validate()
    }
}

/// Builds fresh and zero-shot models for a run.
pub trait Learner: Sync {
    type Model: Classifier;

    /// The untrained model used for the first pseudolabeling pass.
    fn zero_shot(&self, space: &ClassSpace) -> Result<Self::Model>;

    /// A freshly initialized trainable model.
    fn fresh(&self, space: &ClassSpace, seed: u64) -> Result<Self::Model>;
}

#[derive(Debug, Clone)]
pub struct PromptLearner {
    pub config: PromptConfig,
    pub encoder: Arc<FrozenEncoder>,
}

impl PromptLearner {
    pub fn new(config: PromptConfig, dim: usize, encoder_seed: u64) -> Result<Self> {
        let encoder = Arc::new(FrozenEncoder::new(config.prompt_len, dim, encoder_seed)?);
        Ok(Self { config, encoder })
    }
}

impl Learner for PromptLearner {
    type Model = PromptModel;

    fn zero_shot(&self, _space: &ClassSpace) -> Result<PromptModel> {
        PromptModel::zero_shot(&self.config, self.encoder.clone())
    }

    fn fresh(&self, _space: &ClassSpace, seed: u64) -> Result<PromptModel> {
        init_prompt(&self.config, self.encoder.clone(), seed)
    }
}

/// Linear probes start from the zero-shot head, so `fresh` ignores the seed.
#[derive(Debug, Clone, Copy)]
pub struct ProbeLearner {
    pub temperature: f64,
}

impl Learner for ProbeLearner {
    type Model = LinearProbe;

    fn zero_shot(&self, space: &ClassSpace) -> Result<LinearProbe> {
        LinearProbe::from_space(space, self.temperature)
    }

    fn fresh(&self, space: &ClassSpace, _seed: u64) -> Result<LinearProbe> {
        LinearProbe::from_space(space, self.temperature)
    }
}

/// Labeled rows, unlabeled pool and class subsets for one paradigm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wiring {
    pub labeled: LabeledSubset,
    /// Row indices of the unlabeled pool; their labels, if any, are hidden.
    pub unlabeled: Vec<usize>,
    pub labeled_classes: Vec<usize>,
    pub pseudo_classes: Vec<usize>,
}

pub fn wire_paradigm(
    paradigm: Paradigm,
    shots_per_class: usize,
    data: &EmbeddingSet,
    space: &ClassSpace,
    seed: u64,
) -> Result<Wiring> {
    let all = space.all_classes();
    let everything: Vec<usize> = (0..data.len()).collect();
    let rest = |labeled: &LabeledSubset| {
        let mut taken = vec![false; data.len()];
        for &r in &labeled.rows {
            taken[r] = true;
        }
        (0..data.len()).filter(|&r| !taken[r]).collect::<Vec<_>>()
    };
    Ok(match paradigm {
        Paradigm::SemiSupervised => {
            let labeled = sample_shots(data, shots_per_class, &all, seed)?;
            let unlabeled = rest(&labeled);
            Wiring {
                labeled,
                unlabeled,
                labeled_classes: all.clone(),
                pseudo_classes: all,
            }
        }
        Paradigm::TransductiveZeroShot => {
            let partition = space.partition().ok_or_else(|| {
                Error::InvalidInput("TRZSL requires a seen/unseen class partition".into())
            })?;
            let mut labeled = LabeledSubset::default();
            let mut unlabeled = Vec::new();
            for (row, label) in data.labels().iter().enumerate() {
                match label {
                    Some(c) if partition.is_seen(*c) => {
                        labeled.rows.push(row);
                        labeled.labels.push(*c);
                    }
                    _ => unlabeled.push(row),
                }
            }
            Wiring {
                labeled,
                unlabeled,
                labeled_classes: partition.seen.clone(),
                pseudo_classes: partition.unseen.clone(),
            }
        }
        Paradigm::Unsupervised => Wiring {
            labeled: LabeledSubset::default(),
            unlabeled: everything,
            labeled_classes: Vec::new(),
            pseudo_classes: all,
        },
        Paradigm::Supervised => {
            let labeled = if shots_per_class > 0 {
                sample_shots(data, shots_per_class, &all, seed)?
            } else {
                let mut l = LabeledSubset::default();
                for (row, label) in data.labels().iter().enumerate() {
                    if let Some(c) = label {
                        l.rows.push(row);
                        l.labels.push(*c);
                    }
                }
                l
            };
            Wiring {
                labeled,
                unlabeled: Vec::new(),
                labeled_classes: all,
                pseudo_classes: Vec::new(),
            }
        }
    })
}

/// Pseudolabels per class at GRIP round `i` of `iterations`:
/// `floor((i · n_unlabeled / iterations) / num_classes)`, at least 1.
pub fn grip_k(i: usize, iterations: usize, n_unlabeled: usize, num_classes: usize) -> usize {
    assert!(
        (1..=iterations).contains(&i),
        "GRIP round {i} outside 1..={iterations}"
    );
    // Exact rational floor of (i·n/I)/C = floor(i·n / (I·C)).
    (i * n_unlabeled / (iterations * num_classes)).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub k_used: usize,
    pub n_pseudolabels: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// `None` when some pseudolabeled rows have no ground truth.
    pub pseudolabel_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub seen_accuracy: Option<f64>,
    pub unseen_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult<M> {
    pub records: Vec<IterationRecord>,
    pub pseudolabels: Vec<PseudolabelSet>,
    pub loss_traces: Vec<Vec<f64>>,
    pub zero_shot_report: EvalReport,
    pub final_report: EvalReport,
    pub final_model: M,
}

/// Runs `config.strategy`; see [`run_fpl`], [`run_ifpl`] and [`run_grip`].
pub fn run<L: Learner>(
    config: &StrategyConfig,
    learner: &L,
    train_set: &EmbeddingSet,
    test_set: &EmbeddingSet,
    space: &ClassSpace,
) -> Result<RunResult<L::Model>> {
    run_observed(config, learner, train_set, test_set, space, &mut |_, _| {})
}

/// One top-K pass with the zero-shot model, one training run.
pub fn run_fpl<L: Learner>(
    config: &StrategyConfig,
    learner: &L,
    train_set: &EmbeddingSet,
    test_set: &EmbeddingSet,
    space: &ClassSpace,
) -> Result<RunResult<L::Model>> {
    let config = StrategyConfig {
        strategy: Strategy::Fpl,
        ..config.clone()
    };
    run(&config, learner, train_set, test_set, space)
}

/// `iterations` rounds of top-K (fixed K) pseudolabeling with the previous
/// round's model, prompt reinitialization, and training.
pub fn run_ifpl<L: Learner>(
    config: &StrategyConfig,
    learner: &L,
    train_set: &EmbeddingSet,
    test_set: &EmbeddingSet,
    space: &ClassSpace,
) -> Result<RunResult<L::Model>> {
    let config = StrategyConfig {
        strategy: Strategy::Ifpl,
        ..config.clone()
    };
    run(&config, learner, train_set, test_set, space)
}

/// Like IFPL, with K following [`grip_k`] so the last round pseudolabels
/// the whole unlabeled pool.
pub fn run_grip<L: Learner>(
    config: &StrategyConfig,
    learner: &L,
    train_set: &EmbeddingSet,
    test_set: &EmbeddingSet,
    space: &ClassSpace,
) -> Result<RunResult<L::Model>> {
    let config = StrategyConfig {
        strategy: Strategy::Grip,
        ..config.clone()
    };
    run(&config, learner, train_set, test_set, space)
}

/// Same as [`run`], calling `observer(round, &model)` with every freshly
/// initialized model before it is trained.
pub fn run_observed<L: Learner>(
    config: &StrategyConfig,
    learner: &L,
    train_set: &EmbeddingSet,
    test_set: &EmbeddingSet,
    space: &ClassSpace,
    observer: &mut dyn FnMut(usize, &L::Model),
) -> Result<RunResult<L::Model>> {
    config.validate()?;
    if config.paradigm == Paradigm::Supervised {
        return Err(config.strategy.needs_unlabeled());
    }
    let wiring = wire_paradigm(
        config.paradigm,
        config.shots_per_class,
        train_set,
        space,
        config.seed,
    )?;
    if wiring.unlabeled.is_empty() || wiring.pseudo_classes.is_empty() {
        return Err(config.strategy.needs_unlabeled());
    }
    let pool = train_set.select(&wiring.unlabeled)?;
    let truth: Option<HashMap<u64, usize>> = pool
        .labels()
        .iter()
        .all(Option::is_some)
        .then(|| pool.truth());
    let partition_aware = config.paradigm == Paradigm::TransductiveZeroShot;
    let n_unlabeled = pool.len();
    let n_pl_classes = wiring.pseudo_classes.len();
    let rounds = match config.strategy {
        Strategy::Fpl => 1,
        Strategy::Ifpl | Strategy::Grip => config.iterations,
    };

    let zero_shot = learner.zero_shot(space)?;
    let zero_shot_report = evaluate(&zero_shot, test_set, space, partition_aware)?;

    let mut scorer = zero_shot;
    let mut records = Vec::with_capacity(rounds);
    let mut pseudolabels = Vec::with_capacity(rounds);
    let mut loss_traces = Vec::with_capacity(rounds);
    let mut final_report = zero_shot_report.clone();

    for i in 1..=rounds {
        let requested = match config.strategy {
            Strategy::Grip => grip_k(i, rounds, n_unlabeled, n_pl_classes),
            Strategy::Fpl | Strategy::Ifpl => config.k,
        };
        let k = effective_k(requested, n_unlabeled, n_pl_classes);
        let scores = scorer.scores(pool.features(), space)?;
        let mut pl = topk_per_class(scores.view(), k, &wiring.pseudo_classes, pool.ids())?;
        if config.dedup_pseudolabels {
            pl = pl.dedup_keep_best();
        }
        let pl_accuracy = match &truth {
            Some(t) => Some(pseudolabel_accuracy(&pl, t)?),
            None => None,
        };
        let paradigm = ParadigmConfig::for_pools(
            config.paradigm,
            config.shots_per_class,
            wiring.labeled.len(),
            pl.len(),
        )?;
        let round_seed = config.seed ^ i as u64;
        let fresh = learner.fresh(space, round_seed)?;
        observer(i, &fresh);
        let outcome = train(
            &fresh,
            train_set,
            space,
            &wiring.labeled,
            &pl,
            paradigm.weights(),
            &config.schedule,
            &wiring.labeled_classes,
            &wiring.pseudo_classes,
            round_seed,
        )?;
        let report = evaluate(&outcome.model, test_set, space, partition_aware)?;
        records.push(IterationRecord {
            iteration: i,
            k_used: pl.k_used,
            n_pseudolabels: pl.len(),
            gamma: paradigm.gamma,
            lambda: paradigm.lambda,
            pseudolabel_accuracy: pl_accuracy,
            test_accuracy: report.overall_accuracy,
            seen_accuracy: report.seen_accuracy,
            unseen_accuracy: report.unseen_accuracy,
            final_loss: outcome.loss_trace.last().copied(),
        });
        pseudolabels.push(pl);
        loss_traces.push(outcome.loss_trace);
        final_report = report;
        scorer = outcome.model;
    }

    Ok(RunResult {
        records,
        pseudolabels,
        loss_traces,
        zero_shot_report,
        final_report,
        final_model: scorer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grip_k_examples() {
        assert_eq!(grip_k(1, 10, 1000, 10), 10);
        assert_eq!(grip_k(10, 10, 1000, 10), 100);
        assert_eq!(grip_k(3, 10, 100, 7), 4);
        assert_eq!(grip_k(1, 10, 5, 7), 1);
    }

    #[test]
    #[should_panic]
    fn grip_k_rejects_round_zero() {
        grip_k(0, 10, 100, 7);
    }

    #[test]
    fn tags_roundtrip() {
        for s in [Strategy::Fpl, Strategy::Ifpl, Strategy::Grip] {
            assert_eq!(s.tag().parse::<Strategy>().unwrap(), s);
        }
        assert!("grip".parse::<Strategy>().is_err());
    }
}
