//! Sweeps over strategies × paradigms × seeds, and the top-K vs threshold
//! Robin Hood comparison.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, mean_std, robin_hood, softmax_rows, threshold_pseudolabels};
use crate::metrics::{EvalReport, RobinHoodReport};
use crate::model::Classifier;
use crate::optim::train;
use crate::pseudolabel::PseudolabelSet;
use crate::strategy::{run, wire_paradigm, IterationRecord, Learner, ProbeLearner, PromptLearner, Strategy};
use crate::types::{LabeledSubset, LossWeights, Paradigm, Task};

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub paradigm: Paradigm,
    pub seed: u64,
    pub zero_shot: EvalReport,
    pub report: EvalReport,
    pub robin_hood: RobinHoodReport,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; `None` with a single seed.
    pub std: Option<f64>,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, std) = mean_std(values);
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub paradigm: Paradigm,
    pub seeds: Vec<u64>,
    pub test_accuracy: MeanStd,
    pub zero_shot_accuracy: MeanStd,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen_accuracy: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen_accuracy: Option<MeanStd>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harmonic: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunSummary>,
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::InvalidInput("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

/// Runs every (strategy, paradigm, seed) cell, at most `jobs` at a time.
/// Results are ordered by strategy, then paradigm, then seed, regardless
/// of scheduling.
pub fn run_sweep(config: &ExperimentConfig, task: &Task, jobs: Option<usize>) -> Result<SweepResult> {
    let learner = PromptLearner::new(config.prompt_config(), task.space.dim(), config.encoder_seed)?;
    let cells: Vec<(Strategy, Paradigm, u64)> = config
        .strategies
        .iter()
        .flat_map(|&s| {
            config
                .paradigms
                .iter()
                .flat_map(move |&p| config.seeds.iter().map(move |&seed| (s, p, seed)))
        })
        .collect();
    let runs: Vec<RunSummary> = thread_pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(strategy, paradigm, seed)| {
                let sc = config.strategy_config(strategy, paradigm, seed);
                let result = run(&sc, &learner, &task.train, &task.test, &task.space)?;
                Ok(RunSummary {
                    strategy,
                    paradigm,
                    seed,
                    robin_hood: robin_hood(&result.zero_shot_report, &result.final_report)?,
                    zero_shot: result.zero_shot_report,
                    report: result.final_report,
                    records: result.records,
                })
            })
            .collect::<Result<_>>()
    })?;

    let mut summaries = Vec::new();
    for chunk in runs.chunk_by(|a, b| a.strategy == b.strategy && a.paradigm == b.paradigm) {
        let pick = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<MeanStd> {
            let v: Option<Vec<f64>> = chunk.iter().map(|r| f(&r.report)).collect();
            v.and_then(|v| MeanStd::of(&v))
        };
        let zs: Vec<f64> = chunk.iter().map(|r| r.zero_shot.overall_accuracy).collect();
        summaries.push(CellSummary {
            strategy: chunk[0].strategy,
            paradigm: chunk[0].paradigm,
            seeds: chunk.iter().map(|r| r.seed).collect(),
            test_accuracy: pick(&|r| Some(r.overall_accuracy)).expect("non-empty cell"),
            zero_shot_accuracy: MeanStd::of(&zs).expect("non-empty cell"),
            seen_accuracy: pick(&|r| r.seen_accuracy),
            unseen_accuracy: pick(&|r| r.unseen_accuracy),
            harmonic: pick(&|r| r.harmonic),
        });
    }
    Ok(SweepResult {
        config: config.clone(),
        cells: summaries,
        runs,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_csv(records: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "k_used",
        "pseudolabel_accuracy",
        "test_accuracy",
        "seen_accuracy",
        "unseen_accuracy",
    ])?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            r.k_used.to_string(),
            opt(r.pseudolabel_accuracy),
            r.test_accuracy.to_string(),
            opt(r.seen_accuracy),
            opt(r.unseen_accuracy),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Serialize)]
struct RunFile<'a> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    run: &'a RunSummary,
}

/// Writes `<out>/<STRATEGY>_<PARADIGM>/seed_<s>/{trace.csv,result.json}` for
/// every run, a `summary.json` per cell, and the top-level `result.json`.
pub fn write_sweep(out: &Path, result: &SweepResult) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for run in &result.runs {
        let dir = out
            .join(cell_dir(run.strategy, run.paradigm))
            .join(format!("seed_{}", run.seed));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join("trace.csv"), trace_csv(&run.records)?.as_bytes())?;
        let file = RunFile {
            config: &result.config,
            run,
        };
        write_file(&dir.join("result.json"), to_json(&file)?.as_bytes())?;
    }
    for cell in &result.cells {
        let dir = out.join(cell_dir(cell.strategy, cell.paradigm));
        write_file(&dir.join("summary.json"), to_json(cell)?.as_bytes())?;
    }
    write_file(&out.join("result.json"), to_json(result)?.as_bytes())
}

fn cell_dir(strategy: Strategy, paradigm: Paradigm) -> String {
    format!("{}_{}", strategy.tag(), paradigm.tag())
}

/// One arm of the Robin Hood comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonArm {
    pub learner: &'static str,
    pub selection: &'static str,
    pub n_pseudolabels: usize,
    pub report: EvalReport,
    pub robin_hood: RobinHoodReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobinHoodScenario {
    pub seed: u64,
    pub threshold: f64,
    pub zero_shot: EvalReport,
    pub arms: Vec<ComparisonArm>,
}

/// Unsupervised top-K GRIP against one round of confidence-threshold
/// pseudolabeling, for both the prompt model and a linear probe, each
/// measured against the zero-shot baseline.
pub fn robin_hood_scenario(config: &ExperimentConfig, task: &Task, seed: u64) -> Result<RobinHoodScenario> {
    let prompt = PromptLearner::new(config.prompt_config(), task.space.dim(), config.encoder_seed)?;
    let probe = ProbeLearner {
        temperature: config.temperature,
    };
    let zero_shot = evaluate(&prompt.zero_shot(&task.space)?, &task.test, &task.space, false)?;
    let grip = config.strategy_config(Strategy::Grip, Paradigm::Unsupervised, seed);

    let mut arms = Vec::with_capacity(4);
    let topk = run(&grip, &prompt, &task.train, &task.test, &task.space)?;
    arms.push(arm("prompt", "top_k", &topk.pseudolabels, topk.final_report, &zero_shot)?);
    let (pl, report) = threshold_round(&prompt, task, config.threshold, &grip, &zero_shot)?;
    arms.push(arm("prompt", "threshold", std::slice::from_ref(&pl), report, &zero_shot)?);
    let topk = run(&grip, &probe, &task.train, &task.test, &task.space)?;
    arms.push(arm("linear_probe", "top_k", &topk.pseudolabels, topk.final_report, &zero_shot)?);
    let (pl, report) = threshold_round(&probe, task, config.threshold, &grip, &zero_shot)?;
    arms.push(arm("linear_probe", "threshold", std::slice::from_ref(&pl), report, &zero_shot)?);

    Ok(RobinHoodScenario {
        seed,
        threshold: config.threshold,
        zero_shot,
        arms,
    })
}

fn arm(
    learner: &'static str,
    selection: &'static str,
    rounds: &[PseudolabelSet],
    report: EvalReport,
    baseline: &EvalReport,
) -> Result<ComparisonArm> {
    Ok(ComparisonArm {
        learner,
        selection,
        n_pseudolabels: rounds.last().map_or(0, PseudolabelSet::len),
        robin_hood: robin_hood(baseline, &report)?,
        report,
    })
}

/// Pseudolabels every row whose zero-shot confidence exceeds `tau` and
/// trains once. An empty selection leaves the zero-shot model in place.
fn threshold_round<L: Learner>(
    learner: &L,
    task: &Task,
    tau: f64,
    sc: &crate::strategy::StrategyConfig,
    baseline: &EvalReport,
) -> Result<(PseudolabelSet, EvalReport)> {
    let wiring = wire_paradigm(Paradigm::Unsupervised, 0, &task.train, &task.space, sc.seed)?;
    let zs = learner.zero_shot(&task.space)?;
    let pool = task.train.select(&wiring.unlabeled)?;
    let probs = softmax_rows(zs.scores(pool.features(), &task.space)?.view(), zs.temperature());
    let pl = threshold_pseudolabels(probs.view(), tau, pool.ids())?;
    if pl.is_empty() {
        return Ok((pl, baseline.clone()));
    }
    let fresh = learner.fresh(&task.space, sc.seed ^ 1)?;
    let outcome = train(
        &fresh,
        &task.train,
        &task.space,
        &LabeledSubset::default(),
        &pl,
        LossWeights {
            gamma: 0.0,
            lambda: 1.0,
        },
        &sc.schedule,
        &[],
        &wiring.pseudo_classes,
        sc.seed ^ 1,
    )?;
    let report = evaluate(&outcome.model, &task.test, &task.space, false)?;
    Ok((pl, report))
}
