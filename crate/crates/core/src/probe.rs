//! Linear probe: a free C × d weight matrix over the frozen image embeddings.
//! Used as the contrast case to prompt tuning in the per-class bias analysis.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{cross_entropy, gather_batch, Classifier, Example};
use crate::types::ClassSpace;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    weights: Array2<f64>,
    temperature: f64,
}

impl LinearProbe {
    /// Head initialized to the zero-shot class embeddings, so an untrained
    /// probe predicts exactly like the zero-shot classifier.
    pub fn from_space(space: &ClassSpace, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidInput("temperature must be positive".into()));
        }
        Ok(Self {
            weights: space.base_prototypes().to_owned(),
            temperature,
        })
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }
}

impl Classifier for LinearProbe {
    fn scores(&self, images: ArrayView2<'_, f64>, _space: &ClassSpace) -> Result<Array2<f64>> {
        if images.ncols() != self.weights.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.ncols(),
                got: images.ncols(),
            });
        }
        Ok(images.dot(&self.weights.t()))
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
        if space.num_classes() != self.weights.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.nrows(),
                got: space.num_classes(),
            });
        }
        let (targets, images) = gather_batch(batch, space, support)?;
        let w = self.weights.select(ndarray::Axis(0), support);
        let logits = images.dot(&w.t()) * self.temperature;
        let (loss, d_logits) = cross_entropy(logits.view(), &targets)?;
        let d_support = d_logits.t().dot(&images) * self.temperature;
        let mut grad = Array2::zeros(self.weights.raw_dim());
        for (k, &c) in support.iter().enumerate() {
            let mut row = grad.row_mut(c);
            row += &d_support.row(k);
        }
        Ok((loss, grad.into_raw_vec_and_offset().0))
    }

    fn params(&self) -> Vec<f64> {
        self.weights.iter().copied().collect()
    }

    fn set_params(&mut self, params: &[f64]) {
        let src = ArrayView1::from(params)
            .into_shape_with_order(self.weights.raw_dim())
            .expect("probe parameter shape");
        self.weights.assign(&src);
    }
}
