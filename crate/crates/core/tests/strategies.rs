mod common;

use std::collections::HashSet;

use plrefine::metrics::evaluate;
use plrefine::model::{init_prompt, Classifier, DEFAULT_ENCODER_SEED};
use plrefine::optim::{train, TrainSchedule};
use plrefine::pseudolabel::effective_k;
use plrefine::strategy::{
    grip_k, run, run_fpl, run_grip, run_ifpl, run_observed, wire_paradigm, Learner, PromptLearner,
    Strategy, StrategyConfig,
};
use plrefine::synth::{synth_generate, SyntheticSpec};
use plrefine::types::{make_trzsl_split, LabeledSubset, LossWeights, Task};
use plrefine::{Error, Modality, Paradigm, PromptConfig, PseudolabelSet};

fn small_task(seed: u64) -> Task {
    synth_generate(&SyntheticSpec {
        num_classes: 5,
        dim: 12,
        unlabeled_per_class: 30,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn learner(dim: usize) -> PromptLearner {
    PromptLearner::new(PromptConfig::new(Modality::Textual), dim, DEFAULT_ENCODER_SEED).unwrap()
}

fn config(strategy: Strategy, paradigm: Paradigm, iterations: usize, epochs: usize) -> StrategyConfig {
    StrategyConfig {
        iterations,
        schedule: common::short_schedule(epochs),
        seed: 11,
        ..StrategyConfig::new(strategy, paradigm)
    }
}

fn with_partition(mut task: Task) -> Task {
    let split = make_trzsl_split(task.space.num_classes(), 3).unwrap();
    task.space = task.space.with_partition(split).unwrap();
    task
}

#[test]
fn fpl_beats_zero_shot_on_default_task() {
    let fx = common::fixture();
    let task = synth_generate(&fx.spec).unwrap();
    let cfg = config(Strategy::Fpl, Paradigm::Unsupervised, 1, 50);
    let r = run_fpl(&cfg, &learner(task.space.dim()), &task.train, &task.test, &task.space).unwrap();
    assert!(r.final_report.overall_accuracy > r.zero_shot_report.overall_accuracy);
}

#[test]
fn strategies_reject_supervised() {
    let task = small_task(0);
    let l = learner(task.space.dim());
    let cfg = config(Strategy::Fpl, Paradigm::Supervised, 1, 1);
    let err = run_fpl(&cfg, &l, &task.train, &task.test, &task.space).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
    assert_eq!(err.to_string(), "FPL requires unlabeled data");
    assert!(run_grip(&cfg, &l, &task.train, &task.test, &task.space).is_err());
}

#[test]
fn fpl_pseudolabel_count() {
    let task = small_task(1);
    let cfg = config(Strategy::Fpl, Paradigm::Unsupervised, 1, 2);
    let r = run_fpl(&cfg, &learner(12), &task.train, &task.test, &task.space).unwrap();
    let n = task.train.len();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.pseudolabels[0].len(), effective_k(16, n, 5) * 5);
}

#[test]
fn ifpl_first_round_matches_fpl_and_keeps_k() {
    let task = small_task(2);
    let l = learner(12);
    let fpl = run_fpl(&config(Strategy::Fpl, Paradigm::Unsupervised, 1, 3), &l, &task.train, &task.test, &task.space)
        .unwrap();
    let cfg = config(Strategy::Ifpl, Paradigm::Unsupervised, 10, 3);
    let ifpl = run_ifpl(&cfg, &l, &task.train, &task.test, &task.space).unwrap();
    assert_eq!(ifpl.pseudolabels[0], fpl.pseudolabels[0]);
    assert_eq!(ifpl.records.len(), 10);
    let k = effective_k(16, task.train.len(), 5);
    for pl in &ifpl.pseudolabels {
        assert_eq!(pl.k_used, k);
        for c in 0..5 {
            assert_eq!(pl.count_for(c), k);
        }
    }
}

#[test]
fn grip_k_grows_and_covers_pool() {
    let task = small_task(3);
    let iterations = 4;
    let cfg = config(Strategy::Grip, Paradigm::Unsupervised, iterations, 3);
    let r = run_grip(&cfg, &learner(12), &task.train, &task.test, &task.space).unwrap();
    let ks: Vec<usize> = r.records.iter().map(|x| x.k_used).collect();
    assert!(ks.windows(2).all(|w| w[0] <= w[1]), "{ks:?}");
    let n = task.train.len();
    let last = r.pseudolabels.last().unwrap();
    assert_eq!(last.len(), 5 * grip_k(iterations, iterations, n, 5));
    assert!(last.k_used * 5 >= n - 5);
}

#[test]
fn grip_matches_pinned_run() {
    let fx = common::fixture();
    let p = &fx.unsupervised_textual;
    let task = synth_generate(&fx.spec).unwrap();
    let l = learner(task.space.dim());
    let mut cfg = config(Strategy::Grip, Paradigm::Unsupervised, p.iterations, p.epochs);
    cfg.seed = p.run_seed;
    let grip = run(&cfg, &l, &task.train, &task.test, &task.space).unwrap();
    cfg.strategy = Strategy::Fpl;
    let fpl = run(&cfg, &l, &task.train, &task.test, &task.space).unwrap();
    assert!((grip.zero_shot_report.overall_accuracy - fx.zero_shot_accuracy).abs() < 1e-12);
    assert!(grip.final_report.overall_accuracy >= fpl.final_report.overall_accuracy);
    assert!((grip.final_report.overall_accuracy - p.grip_accuracy).abs() <= 0.01);
    assert!((fpl.final_report.overall_accuracy - p.fpl_accuracy).abs() <= 0.01);
}

#[test]
fn wiring_per_paradigm() {
    let task = with_partition(small_task(4));
    let (train, space) = (&task.train, &task.space);

    let ssl = wire_paradigm(Paradigm::SemiSupervised, 2, train, space, 1).unwrap();
    assert_eq!(ssl.labeled.len(), 10);
    assert_eq!(ssl.unlabeled.len(), train.len() - 10);
    assert_eq!(ssl.pseudo_classes, vec![0, 1, 2, 3, 4]);

    let tr = wire_paradigm(Paradigm::TransductiveZeroShot, 2, train, space, 1).unwrap();
    let p = space.partition().unwrap();
    assert_eq!(tr.pseudo_classes, p.unseen);
    assert!(tr.labeled.labels.iter().all(|&c| p.is_seen(c)));
    assert!(tr.unlabeled.iter().all(|&r| p.is_unseen(train.labels()[r].unwrap())));

    let ul = wire_paradigm(Paradigm::Unsupervised, 2, train, space, 1).unwrap();
    assert!(ul.labeled.is_empty());
    assert_eq!(ul.unlabeled.len(), train.len());

    let sl = wire_paradigm(Paradigm::Supervised, 2, train, space, 1).unwrap();
    assert!(sl.unlabeled.is_empty());

    let bare = small_task(4);
    assert!(wire_paradigm(Paradigm::TransductiveZeroShot, 2, &bare.train, &bare.space, 1).is_err());

    for w in [ssl, tr, ul, sl] {
        let labeled: HashSet<u64> = w.labeled.rows.iter().map(|&r| train.ids()[r]).collect();
        assert!(w.unlabeled.iter().all(|&r| !labeled.contains(&train.ids()[r])));
    }
}

#[test]
fn ssl_and_trzsl_runs_record_weights() {
    let task = with_partition(small_task(5));
    let l = learner(12);
    let ssl = run(&config(Strategy::Grip, Paradigm::SemiSupervised, 2, 2), &l, &task.train, &task.test, &task.space)
        .unwrap();
    for (rec, pl) in ssl.records.iter().zip(&ssl.pseudolabels) {
        assert_eq!(rec.gamma, pl.len() as f64 / 10.0);
        assert_eq!(rec.lambda, 1.0);
        assert!(rec.seen_accuracy.is_none());
    }
    let tr = run(
        &config(Strategy::Ifpl, Paradigm::TransductiveZeroShot, 2, 2),
        &l,
        &task.train,
        &task.test,
        &task.space,
    )
    .unwrap();
    let p = task.space.partition().unwrap();
    let n_labeled = task.train.labels().iter().filter(|c| p.is_seen(c.unwrap())).count();
    for (rec, pl) in tr.records.iter().zip(&tr.pseudolabels) {
        assert_eq!(rec.gamma, 1.0);
        assert_eq!(rec.lambda, n_labeled as f64 / pl.len() as f64);
        assert!(pl.entries.iter().all(|e| p.is_unseen(e.class_index)));
        assert!(rec.seen_accuracy.is_some() && rec.unseen_accuracy.is_some());
    }
    assert!(tr.final_report.harmonic.is_some());
}

#[test]
fn fpl_equals_single_round_ifpl() {
    let task = small_task(6);
    let l = learner(12);
    let fpl = run(&config(Strategy::Fpl, Paradigm::Unsupervised, 7, 4), &l, &task.train, &task.test, &task.space)
        .unwrap();
    let ifpl = run(&config(Strategy::Ifpl, Paradigm::Unsupervised, 1, 4), &l, &task.train, &task.test, &task.space)
        .unwrap();
    assert_eq!(fpl.records, ifpl.records);
    assert_eq!(fpl.pseudolabels, ifpl.pseudolabels);
    assert_eq!(fpl.loss_traces, ifpl.loss_traces);
    assert_eq!(fpl.final_model, ifpl.final_model);
}

#[test]
fn every_round_starts_from_fresh_init() {
    let task = small_task(7);
    let l = learner(12);
    let cfg = config(Strategy::Grip, Paradigm::Unsupervised, 3, 2);
    let mut seen = Vec::new();
    run_observed(&cfg, &l, &task.train, &task.test, &task.space, &mut |i, m| {
        seen.push((i, m.clone()))
    })
    .unwrap();
    assert_eq!(seen.len(), 3);
    for (i, m) in seen {
        let expected = init_prompt(&l.config, l.encoder.clone(), cfg.seed ^ i as u64).unwrap();
        assert_eq!(m, expected);
    }
}

#[test]
fn runs_are_deterministic() {
    let task = small_task(8);
    let l = learner(12);
    let cfg = config(Strategy::Grip, Paradigm::Unsupervised, 2, 3);
    let a = run(&cfg, &l, &task.train, &task.test, &task.space).unwrap();
    let b = run(&cfg, &l, &task.train, &task.test, &task.space).unwrap();
    assert_eq!(a.final_model.params(), b.final_model.params());
    assert_eq!(a.loss_traces, b.loss_traces);
}

#[test]
fn supervised_training_fits_separable_toy() {
    let task = synth_generate(&SyntheticSpec {
        num_classes: 3,
        dim: 8,
        unlabeled_per_class: 10,
        sigma: 0.2,
        delta: 0.8,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let l = learner(8);
    let labeled = LabeledSubset {
        rows: (0..30).collect(),
        labels: task.train.labels().iter().map(|c| c.unwrap()).collect(),
    };
    let fresh = l.fresh(&task.space, 3).unwrap();
    let out = train(
        &fresh,
        &task.train,
        &task.space,
        &labeled,
        &PseudolabelSet::default(),
        LossWeights { gamma: 1.0, lambda: 0.0 },
        &TrainSchedule::default(),
        &[0, 1, 2],
        &[],
        3,
    )
    .unwrap();
    let train_acc = evaluate(&out.model, &task.train, &task.space, false).unwrap();
    assert_eq!(train_acc.overall_accuracy, 1.0);
    assert!(out.loss_trace.iter().all(|l| l.is_finite()));
}

#[test]
fn zero_epochs_and_frozen_maps() {
    let task = small_task(9);
    let l = learner(12);
    let fresh = l.fresh(&task.space, 1).unwrap();
    let encoder_before = (*l.encoder).clone();
    let pl = plrefine::pseudolabel::topk_per_class(
        fresh.scores(task.train.features(), &task.space).unwrap().view(),
        4,
        &[0, 1, 2, 3, 4],
        task.train.ids(),
    )
    .unwrap();
    let weights = LossWeights { gamma: 0.0, lambda: 1.0 };
    let none = LabeledSubset::default();
    let all = [0, 1, 2, 3, 4];
    let out = train(&fresh, &task.train, &task.space, &none, &pl, weights, &common::short_schedule(0), &[], &all, 1)
        .unwrap();
    assert_eq!(out.model, fresh);
    assert!(out.loss_trace.is_empty());
    let out = train(&fresh, &task.train, &task.space, &none, &pl, weights, &common::short_schedule(20), &[], &all, 1)
        .unwrap();
    assert_eq!(*out.model.encoder().as_ref(), encoder_before);
    assert!(out.loss_trace.iter().all(|l| l.is_finite()));
    assert_ne!(out.model.params(), fresh.params());
}

#[test]
fn default_task_loss_trace_is_finite() {
    let fx = common::fixture();
    let task = synth_generate(&fx.spec).unwrap();
    let cfg = config(Strategy::Fpl, Paradigm::Unsupervised, 1, 150);
    let r = run(&cfg, &learner(task.space.dim()), &task.train, &task.test, &task.space).unwrap();
    assert_eq!(r.loss_traces[0].len(), 150);
    assert!(r.loss_traces[0].iter().all(|l| l.is_finite()));
}
