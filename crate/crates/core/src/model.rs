//! Differentiable stand-in for a prompt-tuned dual encoder.
//!
//! The frozen encoder is a pair of seeded maps per modality: a *lift*
//! `L` (Md × d) that reads the input embedding and a *mix* `W` (d × Md)
//! that writes back into embedding space. A learnable context `P` (M × d,
//! flattened to `p`) is gated by the lifted input and mixed into an offset:
//!
//! ```text
//! offset(x) = W · (p ⊙ (1 + L·x))
//! ```
//!
//! Textual prompts shift every class embedding `b_c` by `offset(b_c)`,
//! visual prompts shift every image embedding `z` by `offset(z)`, and both
//! results are renormalized to the unit sphere. With `p = 0` the model is
//! exactly the zero-shot classifier over the base class embeddings.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ClassSpace;

/// Default softmax temperature applied to cosine similarities.
pub const DEFAULT_TEMPERATURE: f64 = 10.0;
/// Default encoder seed; the frozen maps are shared across every prompt
/// initialization of a run.
pub const DEFAULT_ENCODER_SEED: u64 = 0x5eed_e4c0;

const INIT_SPREAD: f64 = 0.02;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Textual,
    Visual,
    Multimodal,
}

impl Modality {
    pub fn has_text(self) -> bool {
        matches!(self, Modality::Textual | Modality::Multimodal)
    }

    pub fn has_visual(self) -> bool {
        matches!(self, Modality::Visual | Modality::Multimodal)
    }

    /// Prompt length used unless configured otherwise.
    pub fn default_prompt_len(self) -> usize {
        match self {
            Modality::Textual | Modality::Visual => 16,
            Modality::Multimodal => 8,
        }
    }

    /// Peak learning rate used unless configured otherwise.
    pub fn default_peak_lr(self) -> f64 {
        match self {
            Modality::Textual | Modality::Visual => 0.1,
            Modality::Multimodal => 0.01,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Textual => "textual",
            Modality::Visual => "visual",
            Modality::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textual" => Ok(Modality::Textual),
            "visual" => Ok(Modality::Visual),
            "multimodal" => Ok(Modality::Multimodal),
            other => Err(Error::InvalidInput(format!("unknown modality {other:?}"))),
        }
    }
}

/// How the 0.02 init spread is read: as a standard deviation (default) or
/// literally as a variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScale {
    #[default]
    Std,
    Variance,
}

impl InitScale {
    pub fn std_dev(self) -> f64 {
        match self {
            InitScale::Std => INIT_SPREAD,
            InitScale::Variance => INIT_SPREAD.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub modality: Modality,
    pub prompt_len: usize,
    pub temperature: f64,
    pub init_scale: InitScale,
}

impl PromptConfig {
    pub fn new(modality: Modality) -> Self {
        Self {
            modality,
            prompt_len: modality.default_prompt_len(),
            temperature: DEFAULT_TEMPERATURE,
            init_scale: InitScale::Std,
        }
    }
}

/// Seeded frozen maps standing in for the frozen text and image encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    prompt_len: usize,
    dim: usize,
    text_mix: Array2<f64>,
    text_lift: Array2<f64>,
    vis_mix: Array2<f64>,
    vis_lift: Array2<f64>,
}

impl FrozenEncoder {
    pub fn new(prompt_len: usize, dim: usize, seed: u64) -> Result<Self> {
        if prompt_len == 0 {
            return Err(Error::InvalidInput("prompt length must be at least 1".into()));
        }
        if dim < 2 {
            return Err(Error::InvalidInput(format!("embedding dimension {dim} < 2")));
        }
        let width = prompt_len * dim;
        let mix_std = 1.0 / (width as f64).sqrt();
        let draw = |stream: u64, rows: usize, cols: usize, std: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let normal = Normal::new(0.0, std).expect("positive std");
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        };
        Ok(Self {
            prompt_len,
            dim,
            text_mix: draw(1, dim, width, mix_std),
            text_lift: draw(2, width, dim, 1.0),
            vis_mix: draw(3, dim, width, mix_std),
            vis_lift: draw(4, width, dim, 1.0),
        })
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn text_mix(&self) -> ArrayView2<'_, f64> {
        self.text_mix.view()
    }

    pub fn text_lift(&self) -> ArrayView2<'_, f64> {
        self.text_lift.view()
    }

    pub fn vis_mix(&self) -> ArrayView2<'_, f64> {
        self.vis_mix.view()
    }

    pub fn vis_lift(&self) -> ArrayView2<'_, f64> {
        self.vis_lift.view()
    }
}

/// One training example: an image embedding and its (pseudo)label.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: ArrayView1<'a, f64>,
    pub label: usize,
}

/// Anything that can score images against classes and be trained by SGD
/// on a flat parameter vector.
pub trait Classifier: Clone + Send + Sync {
    /// n×C similarity scores; `temperature · scores` are the logits.
    fn scores(&self, images: ArrayView2<'_, f64>, space: &ClassSpace) -> Result<Array2<f64>>;

    fn temperature(&self) -> f64;

    /// Mean softmax cross-entropy over the batch with the softmax taken
    /// over `support`, and its gradient w.r.t. [`Classifier::params`].
    fn loss_and_grad(
        &self,
        batch: &[Example<'_>],
        space: &ClassSpace,
        support: &[usize],
    ) -> Result<(f64, Vec<f64>)>;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]);

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Loss value plus gradients shaped like the learnable contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub d_text_ctx: Option<Array2<f64>>,
    pub d_vis_ctx: Option<Array2<f64>>,
}

impl GradientBundle {
    pub fn flatten(&self) -> Vec<f64> {
        self.d_text_ctx
            .iter()
            .chain(self.d_vis_ctx.iter())
            .flat_map(|m| m.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptModel {
    modality: Modality,
    text_ctx: Option<Array2<f64>>,
    vis_ctx: Option<Array2<f64>>,
    encoder: Arc<FrozenEncoder>,
    temperature: f64,
}

struct TextForward {
    protos: Array2<f64>,
    norms: Array1<f64>,
    gates: Array2<f64>,
}

struct VisForward {
    feats: Array2<f64>,
    norms: Array1<f64>,
    gates: Array2<f64>,
}

fn check_config(config: &PromptConfig, encoder: &FrozenEncoder) -> Result<()> {
    if config.prompt_len == 0 {
        return Err(Error::InvalidInput("prompt length must be at least 1".into()));
    }
    if config.prompt_len != encoder.prompt_len {
        return Err(Error::DimensionMismatch {
            expected: encoder.prompt_len,
            got: config.prompt_len,
        });
    }
    if !(config.temperature > 0.0 && config.temperature.is_finite()) {
        return Err(Error::InvalidInput("temperature must be positive".into()));
    }
    Ok(())
}

/// Fresh prompt with Gaussian context entries drawn from `seed`.
pub fn init_prompt(
    config: &PromptConfig,
    encoder: Arc<FrozenEncoder>,
    seed: u64,
) -> Result<PromptModel> {
    check_config(config, &encoder)?;
    let normal = Normal::new(0.0, config.init_scale.std_dev()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (encoder.prompt_len, encoder.dim);
    let mut draw = || Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng));
    let text_ctx = config.modality.has_text().then(&mut draw);
    let vis_ctx = config.modality.has_visual().then(&mut draw);
    Ok(PromptModel {
        modality: config.modality,
        text_ctx,
        vis_ctx,
        encoder,
        temperature: config.temperature,
    })
}

impl PromptModel {
    /// Prompt with all-zero contexts: behaves exactly like the zero-shot
    /// classifier over the base class embeddings.
    pub fn zero_shot(config: &PromptConfig, encoder: Arc<FrozenEncoder>) -> Result<Self> {
        check_config(config, &encoder)?;
        let shape = (encoder.prompt_len, encoder.dim);
        Ok(PromptModel {
            modality: config.modality,
            text_ctx: config.modality.has_text().then(|| Array2::zeros(shape)),
            vis_ctx: config.modality.has_visual().then(|| Array2::zeros(shape)),
            encoder,
            temperature: config.temperature,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn text_ctx(&self) -> Option<&Array2<f64>> {
        self.text_ctx.as_ref()
    }

    pub fn vis_ctx(&self) -> Option<&Array2<f64>> {
        self.vis_ctx.as_ref()
    }

    pub fn text_ctx_mut(&mut self) -> Option<&mut Array2<f64>> {
        self.text_ctx.as_mut()
    }

    pub fn vis_ctx_mut(&mut self) -> Option<&mut Array2<f64>> {
        self.vis_ctx.as_mut()
    }

    pub fn encoder(&self) -> &Arc<FrozenEncoder> {
        &self.encoder
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.encoder.dim {
            return Err(Error::DimensionMismatch {
                expected: self.encoder.dim,
                got: d,
            });
        }
        Ok(())
    }

    fn flat(ctx: &Array2<f64>) -> ArrayView1<'_, f64> {
        ctx.view()
            .into_shape_with_order(ctx.len())
            .expect("contexts are standard layout")
    }

    /// Shared forward for both modalities: rows of `inputs` are shifted by
    /// `mix · (ctx ⊙ (1 + lift · row))` and renormalized.
    fn shift(
        inputs: ArrayView2<'_, f64>,
        ctx: ArrayView1<'_, f64>,
        mix: ArrayView2<'_, f64>,
        lift: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
        let mut gates = inputs.dot(&lift.t());
        gates.mapv_inplace(|g| g + 1.0);
        let modulated = &gates * &ctx;
        let mut shifted = modulated.dot(&mix.t());
        shifted += &inputs;
        let mut norms = Array1::zeros(shifted.nrows());
        for (mut row, n) in shifted.rows_mut().into_iter().zip(norms.iter_mut()) {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::DegenerateEmbedding);
            }
            row.mapv_inplace(|x| x / norm);
            *n = norm;
        }
        Ok((shifted, norms, gates))
    }

    fn text_forward(&self, space: &ClassSpace) -> Result<Option<TextForward>> {
        self.check_dim(space.dim())?;
        let Some(ctx) = &self.text_ctx else {
            return Ok(None);
        };
        let (protos, norms, gates) = Self::shift(
            space.base_prototypes(),
            Self::flat(ctx),
            self.encoder.text_mix.view(),
            self.encoder.text_lift.view(),
        )?;
        Ok(Some(TextForward {
            protos,
            norms,
            gates,
        }))
    }

    fn vis_forward(&self, images: ArrayView2<'_, f64>) -> Result<Option<VisForward>> {
        self.check_dim(images.ncols())?;
        let Some(ctx) = &self.vis_ctx else {
            return Ok(None);
        };
        let (feats, norms, gates) = Self::shift(
            images,
            Self::flat(ctx),
            self.encoder.vis_mix.view(),
            self.encoder.vis_lift.view(),
        )?;
        Ok(Some(VisForward {
            feats,
            norms,
            gates,
        }))
    }

    /// Class embeddings under the current textual prompt (C × d, unit rows).
    pub fn class_prototypes(&self, space: &ClassSpace) -> Result<Array2<f64>> {
        Ok(match self.text_forward(space)? {
            Some(t) => t.protos,
            None => space.base_prototypes().to_owned(),
        })
    }

    /// Image embedding under the current visual prompt.
    pub fn image_features(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let batch = z.insert_axis(Axis(0));
        Ok(self.image_features_batch(batch)?.row(0).to_owned())
    }

    pub fn image_features_batch(&self, images: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(match self.vis_forward(images)? {
            Some(v) => v.feats,
            None => images.to_owned(),
        })
    }

    /// `temperature · ⟨features(z), prototype_c⟩` for each class in `class_subset`.
    pub fn logits(
        &self,
        z: ArrayView1<'_, f64>,
        space: &ClassSpace,
        class_subset: &[usize],
    ) -> Result<Array1<f64>> {
        if class_subset.is_empty() {
            return Err(Error::InvalidInput("empty class subset".into()));
        }
        let protos = self.class_prototypes(space)?;
        let f = self.image_features(z)?;
        class_subset
            .iter()
            .map(|&c| {
                if c >= protos.nrows() {
                    return Err(Error::InvalidInput(format!("class {c} out of range")));
                }
                Ok(self.temperature * f.dot(&protos.row(c)))
            })
            .collect::<Result<Vec<_>>>()
            .map(Array1::from)
    }

    /// Mean cross-entropy over the batch and its analytic gradient w.r.t.
    /// the learnable contexts, backpropagated through renormalization and
    /// the frozen maps.
    pub fn batch_loss_and_grad(
        &self,
        batch: &[Example<'_>],
        space: &ClassSpace,
        class_subset: &[usize],
    ) -> Result<GradientBundle> {
        let (targets, images) = gather_batch(batch, space, class_subset)?;
        let text = self.text_forward(space)?;
        let vis = self.vis_forward(images.view())?;
        let protos = match &text {
            Some(t) => t.protos.view(),
            None => space.base_prototypes(),
        };
        let feats = match &vis {
            Some(v) => v.feats.view(),
            None => images.view(),
        };
        let support_protos = protos.select(Axis(0), class_subset);
        let logits = feats.dot(&support_protos.t()) * self.temperature;
        let (loss, d_logits) = cross_entropy(logits.view(), &targets)?;

        let d_text_ctx = match &text {
            Some(t) => {
                let d_support = d_logits.t().dot(&feats) * self.temperature;
                let mut d_protos = Array2::zeros(t.protos.raw_dim());
                for (k, &c) in class_subset.iter().enumerate() {
                    let mut row = d_protos.row_mut(c);
                    row += &d_support.row(k);
                }
                Some(back_through_shift(
                    d_protos,
                    &t.protos,
                    &t.norms,
                    &t.gates,
                    self.encoder.text_mix.view(),
                    self.encoder.prompt_len,
                ))
            }
            None => None,
        };
        let d_vis_ctx = match &vis {
            Some(v) => {
                let d_feats = d_logits.dot(&support_protos) * self.temperature;
                Some(back_through_shift(
                    d_feats,
                    &v.feats,
                    &v.norms,
                    &v.gates,
                    self.encoder.vis_mix.view(),
                    self.encoder.prompt_len,
                ))
            }
            None => None,
        };
        Ok(GradientBundle {
            loss,
            d_text_ctx,
            d_vis_ctx,
        })
    }
}

/// Backpropagates `d_out` (gradient w.r.t. the renormalized rows `out`)
/// to the flattened context and reshapes it to M × d.
fn back_through_shift(
    mut d_out: Array2<f64>,
    out: &Array2<f64>,
    norms: &Array1<f64>,
    gates: &Array2<f64>,
    mix: ArrayView2<'_, f64>,
    prompt_len: usize,
) -> Array2<f64> {
    // d/du of u/|u| is (I - w wᵀ)/|u|
    Zip::from(d_out.rows_mut())
        .and(out.rows())
        .and(norms)
        .for_each(|mut g, w, &n| {
            let radial = g.dot(&w);
            g.scaled_add(-radial, &w);
            g.mapv_inplace(|x| x / n);
        });
    let d_modulated = d_out.dot(&mix);
    let d_flat = (&d_modulated * gates).sum_axis(Axis(0));
    let dim = d_flat.len() / prompt_len;
    d_flat
        .into_shape_with_order((prompt_len, dim))
        .expect("context shape")
}

/// Validates a batch and stacks it into target positions within `support`
/// plus a b × d feature matrix.
pub(crate) fn gather_batch(
    batch: &[Example<'_>],
    space: &ClassSpace,
    support: &[usize],
) -> Result<(Vec<usize>, Array2<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if support.is_empty() {
        return Err(Error::InvalidInput("empty class subset".into()));
    }
    let c = space.num_classes();
    let mut position = vec![usize::MAX; c];
    for (k, &class) in support.iter().enumerate() {
        if class >= c {
            return Err(Error::InvalidInput(format!("class {class} out of range")));
        }
        position[class] = k;
    }
    let d = space.dim();
    let mut images = Array2::zeros((batch.len(), d));
    let mut targets = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        if ex.features.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: ex.features.len(),
            });
        }
        let pos = position.get(ex.label).copied().unwrap_or(usize::MAX);
        if pos == usize::MAX {
            return Err(Error::InvalidInput(format!(
                "label {} not in the class subset",
                ex.label
            )));
        }
        images.row_mut(i).assign(&ex.features);
        targets.push(pos);
    }
    Ok((targets, images))
}

/// Mean softmax cross-entropy (log-sum-exp stabilized) and its gradient
/// w.r.t. the logits.
pub(crate) fn cross_entropy(
    logits: ArrayView2<'_, f64>,
    targets: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let b = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((row, mut g), &t) in logits.rows().into_iter().zip(grad.rows_mut()).zip(targets) {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut sum = 0.0;
        for (gi, &x) in g.iter_mut().zip(row.iter()) {
            let e = (x - max).exp();
            *gi = e;
            sum += e;
        }
        total += max + sum.ln() - row[t];
        g.mapv_inplace(|e| e / (sum * b));
        g[t] -= 1.0 / b;
    }
    let loss = total / b;
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    Ok((loss, grad))
}

impl Classifier for PromptModel {
    fn scores(&self, images: ArrayView2<'_, f64>, space: &ClassSpace) -> Result<Array2<f64>> {
        let protos = self.class_prototypes(space)?;
        let feats = self.image_features_batch(images)?;
        Ok(feats.dot(&protos.t()))
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn loss_and_grad(
        &self,
        batch: &[Example<'_>],
        space: &ClassSpace,
        support: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let g = self.batch_loss_and_grad(batch, space, support)?;
        Ok((g.loss, g.flatten()))
    }

    fn params(&self) -> Vec<f64> {
        self.text_ctx
            .iter()
            .chain(self.vis_ctx.iter())
            .flat_map(|m| m.iter().copied())
            .collect()
    }

    fn set_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        for ctx in self.text_ctx.iter_mut().chain(self.vis_ctx.iter_mut()) {
            let n = ctx.len();
            let shape = ctx.raw_dim();
            let src = ArrayView1::from(&params[offset..offset + n]);
            ctx.assign(&src.into_shape_with_order(shape).expect("ctx shape"));
            offset += n;
        }
        assert_eq!(offset, params.len(), "parameter vector length mismatch");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{normalize_rows, unit_normalize};
    use ndarray::array;

    fn space(c: usize, d: usize, seed: u64) -> ClassSpace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut b = Array2::from_shape_simple_fn((c, d), || normal.sample(&mut rng));
        normalize_rows(&mut b).unwrap();
        ClassSpace::new((0..c).map(|i| format!("c{i}")).collect(), b).unwrap()
    }

    fn setup(modality: Modality, m: usize, d: usize) -> (PromptConfig, Arc<FrozenEncoder>) {
        let mut cfg = PromptConfig::new(modality);
        cfg.prompt_len = m;
        (cfg, Arc::new(FrozenEncoder::new(m, d, 11).unwrap()))
    }

    #[test]
    fn init_statistics_and_determinism() {
        let (cfg, enc) = setup(Modality::Multimodal, 40, 125);
        let a = init_prompt(&cfg, enc.clone(), 5).unwrap();
        let b = init_prompt(&cfg, enc.clone(), 5).unwrap();
        let c = init_prompt(&cfg, enc, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let p = a.params();
        assert_eq!(p.len(), 10_000);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / p.len() as f64;
        assert!((var.sqrt() - 0.02).abs() < 0.002);
    }

    #[test]
    fn variance_reading_widens_init() {
        let (mut cfg, enc) = setup(Modality::Textual, 16, 32);
        cfg.init_scale = InitScale::Variance;
        let p = init_prompt(&cfg, enc, 1).unwrap().params();
        let sd = (p.iter().map(|x| x * x).sum::<f64>() / p.len() as f64).sqrt();
        assert!((sd - 0.02f64.sqrt()).abs() < 0.02);
    }

    #[test]
    fn zero_context_is_zero_shot() {
        let sp = space(5, 8, 1);
        let (cfg, enc) = setup(Modality::Multimodal, 2, 8);
        let m = PromptModel::zero_shot(&cfg, enc).unwrap();
        let protos = m.class_prototypes(&sp).unwrap();
        let gap = (&protos - &sp.base_prototypes()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(gap < 1e-12);
        let z = sp.base_prototypes().row(0).to_owned();
        let zf = m.image_features(z.view()).unwrap();
        assert!((&zf - &z).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)) < 1e-12);
    }

    #[test]
    fn modality_contracts() {
        let sp = space(5, 8, 2);
        let (cfg, enc) = setup(Modality::Visual, 2, 8);
        let m = init_prompt(&cfg, enc, 3).unwrap();
        assert_eq!(m.class_prototypes(&sp).unwrap(), sp.base_prototypes());
        let (cfg, enc) = setup(Modality::Textual, 2, 8);
        let m = init_prompt(&cfg, enc, 3).unwrap();
        let z = sp.base_prototypes().row(1).to_owned();
        assert_eq!(m.image_features(z.view()).unwrap(), z);
    }

    #[test]
    fn transformed_rows_are_unit() {
        let sp = space(6, 8, 3);
        let (mut cfg, enc) = setup(Modality::Multimodal, 3, 8);
        cfg.init_scale = InitScale::Variance;
        let m = init_prompt(&cfg, enc, 4).unwrap();
        let protos = m.class_prototypes(&sp).unwrap();
        for row in protos.rows() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert_ne!(protos, sp.base_prototypes());
        let z = unit_normalize(array![1.0, 2.0, 3.0, 0.0, -1.0, 0.5, 0.2, 0.1].view()).unwrap();
        let f = m.image_features(z.view()).unwrap();
        assert!((f.dot(&f).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn logits_examples() {
        let sp = space(5, 8, 4);
        let (mut cfg, enc) = setup(Modality::Textual, 2, 8);
        cfg.temperature = 100.0;
        let m = PromptModel::zero_shot(&cfg, enc).unwrap();
        let z = sp.base_prototypes().row(3).to_owned();
        let l = m.logits(z.view(), &sp, &sp.all_classes()).unwrap();
        assert!((l[3] - 100.0).abs() < 1e-9);
        assert!(l.iter().all(|&x| x <= l[3]));
        assert!(m.logits(z.view(), &sp, &[]).is_err());

        let b = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let sp2 = ClassSpace::new(vec!["a".into(), "b".into()], b).unwrap();
        let (cfg, enc) = setup(Modality::Textual, 1, 3);
        let m = PromptModel::zero_shot(&cfg, enc).unwrap();
        let l = m.logits(array![0.0, 0.0, 1.0].view(), &sp2, &[0, 1]).unwrap();
        assert_eq!(l, array![0.0, 0.0]);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Array2::<f64>::zeros((3, 7));
        let (loss, _) = cross_entropy(logits.view(), &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn margin_formula() {
        // loss = ln(1 + Σ exp(-margin_j))
        let logits = array![[2.0, 0.5, -1.0, 1.5]];
        let (loss, _) = cross_entropy(logits.view(), &[0]).unwrap();
        let expected = (1.0f64 + (-1.5f64).exp() + (-3.0f64).exp() + (-0.5f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-14);
    }

    #[test]
    fn huge_logits_are_stable() {
        let logits = array![[1e4, -1e4, 0.0]];
        let (loss, g) = cross_entropy(logits.view(), &[1]).unwrap();
        assert!((loss - 2e4).abs() < 1e-6);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn labels_outside_subset_rejected() {
        let sp = space(4, 8, 5);
        let (cfg, enc) = setup(Modality::Textual, 2, 8);
        let m = init_prompt(&cfg, enc, 1).unwrap();
        let z = sp.base_prototypes().row(0).to_owned();
        let batch = [Example {
            features: z.view(),
            label: 3,
        }];
        assert!(m.batch_loss_and_grad(&batch, &sp, &[0, 1]).is_err());
        assert!(m.batch_loss_and_grad(&batch, &sp, &[0, 3]).is_ok());
    }

    #[test]
    fn set_params_roundtrip() {
        let (cfg, enc) = setup(Modality::Multimodal, 2, 4);
        let mut m = init_prompt(&cfg, enc, 1).unwrap();
        let p: Vec<f64> = (0..m.num_params()).map(|i| i as f64).collect();
        m.set_params(&p);
        assert_eq!(m.params(), p);
        assert_eq!(m.text_ctx().unwrap()[[1, 2]], 6.0);
        assert_eq!(m.vis_ctx().unwrap()[[0, 1]], 9.0);
    }

    #[test]
    fn frozen_maps_scaled() {
        let enc = FrozenEncoder::new(16, 32, 7).unwrap();
        let m = enc.text_mix();
        assert_eq!(m.dim(), (32, 512));
        let sd = (m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64).sqrt();
        assert!((sd * 512f64.sqrt() - 1.0).abs() < 0.05);
        assert_ne!(enc.text_mix(), enc.vis_mix());
        assert_eq!(enc, FrozenEncoder::new(16, 32, 7).unwrap());
    }
}
