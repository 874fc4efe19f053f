#![allow(dead_code)]

use std::sync::Arc;

use ndarray::{Array1, Array2};
use plrefine::model::{FrozenEncoder, InitScale, PromptConfig};
use plrefine::optim::TrainSchedule;
use plrefine::synth::SyntheticSpec;
use plrefine::types::unit_normalize;
use plrefine::{ClassSpace, EmbeddingSet, Modality};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Pinned {
    pub run_seed: u64,
    pub iterations: usize,
    pub epochs: usize,
    pub fpl_accuracy: f64,
    pub grip_accuracy: f64,
}

#[derive(Debug, Deserialize)]
pub struct Fixture {
    pub spec: SyntheticSpec,
    pub zero_shot_accuracy: f64,
    pub unsupervised_textual: Pinned,
}

pub fn fixture() -> Fixture {
    serde_json::from_str(include_str!("../fixtures/default_synth.json")).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = gaussian_matrix(rng, rows, cols, 1.0);
    for mut r in m.rows_mut() {
        let u: Array1<f64> = unit_normalize(r.view()).unwrap();
        r.assign(&u);
    }
    m
}

pub fn random_space(rng: &mut ChaCha8Rng, c: usize, d: usize) -> ClassSpace {
    let names = (0..c).map(|i| format!("c{i}")).collect();
    ClassSpace::new(names, unit_rows(rng, c, d)).unwrap()
}

pub fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> EmbeddingSet {
    let labels = (0..n).map(|_| Some(rng.random_range(0..c))).collect();
    EmbeddingSet::new(unit_rows(rng, n, d), labels, (0..n as u64).collect(), c).unwrap()
}

pub fn prompt_config(modality: Modality, m: usize, temperature: f64) -> PromptConfig {
    PromptConfig {
        modality,
        prompt_len: m,
        temperature,
        init_scale: InitScale::Std,
    }
}

pub fn encoder(m: usize, d: usize, seed: u64) -> Arc<FrozenEncoder> {
    Arc::new(FrozenEncoder::new(m, d, seed).unwrap())
}

/// Default schedule with fewer epochs; warmup shrinks to fit very short runs.
pub fn short_schedule(epochs: usize) -> TrainSchedule {
    let defaults = TrainSchedule::default();
    TrainSchedule {
        epochs,
        warmup_epochs: defaults.warmup_epochs.min(epochs.saturating_sub(1) / 2),
        ..defaults
    }
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).fold(0.0, |m: f64, &x| m.max(x))
}
