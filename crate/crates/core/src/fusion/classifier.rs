use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::nn::{dropout_mask, gelu, gelu_grad, join, Linear, ParamView, ParamViewMut, Parameters};

/// `input → input/2 → classes` with GELU and inverted dropout on the hidden
/// layer. Every configuration uses this same family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub hidden: Linear,
    pub output: Linear,
    pub dropout: f64,
}

pub struct MlpCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    mask: Array2<f64>,
    dropped: Array2<f64>,
}

pub fn hidden_width(input: usize) -> usize {
    (input / 2).max(1)
}

impl MlpClassifier {
    pub fn new<R: Rng>(rng: &mut R, input: usize, num_classes: usize, dropout: f64) -> Self {
        let h = hidden_width(input);
        Self {
            hidden: Linear::new(rng, input, h),
            output: Linear::new(rng, h, num_classes),
            dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.output.output_dim()
    }

    /// Dropout is active only when `rng` is given.
    pub fn forward<R: Rng>(&self, x: &Array2<f64>, rng: Option<&mut R>) -> (Array2<f64>, MlpCache) {
        let pre = self.hidden.forward(x);
        let act = pre.mapv(gelu);
        let mask = match rng {
            Some(rng) => dropout_mask(rng, act.dim(), self.dropout),
            None => Array2::ones(act.dim()),
        };
        let dropped = &act * &mask;
        let logits = self.output.forward(&dropped);
        (
            logits,
            MlpCache {
                input: x.clone(),
                pre,
                mask,
                dropped,
            },
        )
    }

    pub fn backward(&self, cache: &MlpCache, dlogits: &Array2<f64>, grad: &mut MlpClassifier) -> Array2<f64> {
        let ddropped = self.output.backward(&cache.dropped, dlogits, &mut grad.output);
        let dpre = ddropped * &cache.mask * &cache.pre.mapv(gelu_grad);
        self.hidden.backward(&cache.input, &dpre, &mut grad.hidden)
    }

    /// Inference-mode logits for one feature vector.
    pub fn classify(&self, features: &[f64]) -> Result<Vec<f64>, FusionError> {
        if features.len() != self.input_dim() {
            return Err(FusionError::DimensionMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        let x = Array1::from(features.to_vec()).insert_axis(ndarray::Axis(0));
        let (logits, _) = self.forward::<rand_chacha::ChaCha8Rng>(&x, None);
        Ok(logits.row(0).to_vec())
    }
}

impl Parameters for MlpClassifier {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.hidden.visit(&join(prefix, "hidden"), out);
        self.output.visit(&join(prefix, "output"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.hidden.visit_mut(&join(prefix, "hidden"), out);
        self.output.visit_mut(&join(prefix, "output"), out);
    }
}
