//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_embedding_file;
use crate::model::{InitScale, Modality, PromptConfig, DEFAULT_ENCODER_SEED, DEFAULT_TEMPERATURE};
use crate::optim::TrainSchedule;
use crate::strategy::{Strategy, StrategyConfig};
use crate::synth::{synth_generate, SyntheticSpec};
use crate::types::{make_trzsl_split, Paradigm, Task};

pub const CONFIG_VERSION: u32 = 1;

/// Where the embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// PLE1 files; relative paths are resolved against the config file.
    Files { train: PathBuf, test: PathBuf },
}

/// Training schedule fields; `peak_lr` defaults by modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::warmup_epochs")]
    pub warmup_epochs: usize,
    #[serde(default = "defaults::warmup_lr")]
    pub warmup_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_lr: Option<f64>,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = TrainSchedule::default();
        Self {
            epochs: s.epochs,
            warmup_epochs: s.warmup_epochs,
            warmup_lr: s.warmup_lr,
            peak_lr: None,
            batch_size: s.batch_size,
            momentum: s.momentum,
        }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self, modality: Modality) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            warmup_lr: self.warmup_lr,
            peak_lr: self.peak_lr.unwrap_or(modality.default_peak_lr()),
            batch_size: self.batch_size,
            momentum: self.momentum,
        }
    }
}

mod defaults {
    use super::*;

    pub fn epochs() -> usize {
        TrainSchedule::default().epochs
    }
    pub fn warmup_epochs() -> usize {
        TrainSchedule::default().warmup_epochs
    }
    pub fn warmup_lr() -> f64 {
        TrainSchedule::default().warmup_lr
    }
    pub fn batch_size() -> usize {
        TrainSchedule::default().batch_size
    }
    pub fn momentum() -> f64 {
        TrainSchedule::default().momentum
    }
    pub fn k() -> usize {
        16
    }
    pub fn shots() -> usize {
        2
    }
    pub fn temperature() -> f64 {
        DEFAULT_TEMPERATURE
    }
    pub fn encoder_seed() -> u64 {
        DEFAULT_ENCODER_SEED
    }
    pub fn seeds() -> Vec<u64> {
        vec![1, 2, 3, 4, 5]
    }
    pub fn threshold() -> f64 {
        0.95
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub data: DataSource,
    pub paradigms: Vec<Paradigm>,
    pub strategies: Vec<Strategy>,
    #[serde(default = "defaults::k")]
    pub k: usize,
    /// Rounds for IFPL and GRIP (default 10); ignored by FPL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_len: Option<usize>,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub init_scale: InitScale,
    #[serde(default = "defaults::shots")]
    pub shots_per_class: usize,
    #[serde(default)]
    pub dedup_pseudolabels: bool,
    /// Seed of the seen/unseen class split used by TRZSL.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "defaults::encoder_seed")]
    pub encoder_seed: u64,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    /// Confidence threshold of the comparison mode in the Robin Hood scenario.
    #[serde(default = "defaults::threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates a config file, resolving relative data paths
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Files { train, test } = &mut config.data {
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.paradigms.is_empty() {
            return fail("paradigms must not be empty".into());
        }
        if self.strategies.is_empty() {
            return fail("strategies must not be empty".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if has_duplicates(&self.seeds)
            || has_duplicates(&self.paradigms)
            || has_duplicates(&self.strategies)
        {
            return fail("seeds, paradigms and strategies must not repeat".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.iterations == Some(0) {
            return fail("iterations must be at least 1".into());
        }
        if self.prompt_len == Some(0) {
            return fail("prompt_len must be at least 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail("threshold must be in (0, 1)".into());
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.schedule
            .resolve(self.modality)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Non-fatal issues worth reporting before a run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.iterations.is_some() && self.strategies.contains(&Strategy::Fpl) {
            out.push("iterations is ignored by FPL, which always runs a single round".into());
        }
        out
    }

    pub fn prompt_config(&self) -> PromptConfig {
        PromptConfig {
            prompt_len: self
                .prompt_len
                .unwrap_or(self.modality.default_prompt_len()),
            temperature: self.temperature,
            init_scale: self.init_scale,
            ..PromptConfig::new(self.modality)
        }
    }

    pub fn strategy_config(&self, strategy: Strategy, paradigm: Paradigm, seed: u64) -> StrategyConfig {
        StrategyConfig {
            strategy,
            k: self.k,
            iterations: match strategy {
                Strategy::Fpl => 1,
                _ => self.iterations.unwrap_or(10),
            },
            paradigm,
            shots_per_class: self.shots_per_class,
            schedule: self.schedule.resolve(self.modality),
            dedup_pseudolabels: self.dedup_pseudolabels,
            seed,
        }
    }

    /// Loads or generates the task. The class space gets a seen/unseen
    /// partition when any paradigm needs one.
    pub fn load_task(&self) -> Result<Task> {
        let mut task = match &self.data {
            DataSource::Synthetic(spec) => synth_generate(spec)?,
            DataSource::Files { train, test } => {
                let (train, space) = read_embedding_file(train)?;
                let (test, test_space) = read_embedding_file(test)?;
                if test_space != space {
                    return Err(Error::InvalidInput(
                        "train and test files disagree on the class space".into(),
                    ));
                }
                Task { train, test, space }
            }
        };
        if self.paradigms.contains(&Paradigm::TransductiveZeroShot) && task.space.partition().is_none() {
            let split = make_trzsl_split(task.space.num_classes(), self.split_seed)?;
            task.space = task.space.with_partition(split)?;
        }
        Ok(task)
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items.iter().enumerate().any(|(i, a)| items[..i].contains(a))
}
