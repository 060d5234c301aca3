use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{EncoderError, IMAGE_ENCODER_LAYERS, TEXT_ENCODER_LAYERS};
use crate::nn::{join, ParamView, ParamViewMut, Parameters};

/// Which 1-based encoder layers receive updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePolicy {
    pub total_layers: usize,
    pub trainable_layers: BTreeSet<usize>,
}

impl FreezePolicy {
    pub fn new(total_layers: usize, trainable_layers: impl IntoIterator<Item = usize>) -> Result<Self, EncoderError> {
        let trainable_layers: BTreeSet<usize> = trainable_layers.into_iter().collect();
        if let Some(&bad) = trainable_layers.iter().find(|&&l| l == 0 || l > total_layers) {
            return Err(EncoderError::LayerOutOfRange {
                layer: bad,
                total: total_layers,
            });
        }
        Ok(Self {
            total_layers,
            trainable_layers,
        })
    }

    pub fn frozen(total_layers: usize) -> Self {
        Self {
            total_layers,
            trainable_layers: BTreeSet::new(),
        }
    }

    /// The last `k` layers trainable.
    pub fn top(total_layers: usize, k: usize) -> Self {
        Self {
            total_layers,
            trainable_layers: (total_layers.saturating_sub(k) + 1..=total_layers).collect(),
        }
    }

    /// Layers 11–12 of the 12-layer image encoder.
    pub fn image_default() -> Self {
        Self::top(IMAGE_ENCODER_LAYERS, 2)
    }

    /// Layers 21–24 of the 24-layer text encoder.
    pub fn text_default() -> Self {
        Self::top(TEXT_ENCODER_LAYERS, 4)
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable_layers.contains(&layer)
    }
}

/// One adaptable encoder layer: `h ↦ h ⊙ (1 + scale) + shift`.
/// Freshly built layers are the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackLayer {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

/// Per-layer parameter groups of an encoder's upper blocks, applied on top
/// of the frozen base embedding. Text stacks re-normalize their output so
/// the unit-norm contract survives fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderStack {
    pub name: String,
    pub layers: Vec<StackLayer>,
    pub renormalize: bool,
}

pub struct EncoderStackCache {
    inputs: Vec<Array2<f64>>,
    pre_norm: Array2<f64>,
}

impl EncoderStack {
    pub fn identity(name: &str, layers: usize, dim: usize, renormalize: bool) -> Self {
        Self {
            name: name.to_string(),
            layers: (0..layers)
                .map(|_| StackLayer {
                    scale: Array1::zeros(dim),
                    shift: Array1::zeros(dim),
                })
                .collect(),
            renormalize,
        }
    }

    pub fn image() -> Self {
        Self::identity("image_encoder", IMAGE_ENCODER_LAYERS, super::IMAGE_EMBED_DIM, false)
    }

    pub fn text() -> Self {
        Self::identity("text_encoder", TEXT_ENCODER_LAYERS, super::TEXT_EMBED_DIM, true)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameter names of 1-based `layer`.
    pub fn layer_param_names(&self, layer: usize) -> Vec<String> {
        let base = join(&self.name, &format!("layers.{layer}"));
        vec![join(&base, "scale"), join(&base, "shift")]
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, EncoderStackCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let next = &h * &(&layer.scale + 1.0) + &layer.shift;
            inputs.push(h);
            h = next;
        }
        let pre_norm = h.clone();
        if self.renormalize {
            for mut row in h.rows_mut() {
                let n = row.dot(&row).sqrt();
                if n > 0.0 {
                    row /= n;
                }
            }
        }
        (h, EncoderStackCache { inputs, pre_norm })
    }

    pub fn backward(&self, cache: &EncoderStackCache, dy: &Array2<f64>, grad: &mut EncoderStack) -> Array2<f64> {
        let mut dh = dy.clone();
        if self.renormalize {
            for (mut drow, xrow) in dh.rows_mut().into_iter().zip(cache.pre_norm.rows()) {
                let n = xrow.dot(&xrow).sqrt();
                if n > 0.0 {
                    let y = &xrow / n;
                    let proj = y.dot(&drow);
                    let g = (&drow - &(&y * proj)) / n;
                    drow.assign(&g);
                }
            }
        }
        for ((layer, g), input) in self.layers.iter().zip(grad.layers.iter_mut()).zip(&cache.inputs).rev() {
            g.scale += &(&dh * input).sum_axis(Axis(0));
            g.shift += &dh.sum_axis(Axis(0));
            dh = &dh * &(&layer.scale + 1.0);
        }
        dh
    }
}

impl Parameters for EncoderStack {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        for (i, layer) in self.layers.iter().enumerate() {
            let names = self.layer_param_names(i + 1);
            out.push(ParamView {
                name: join(prefix, &names[0]),
                data: layer.scale.view().into_dyn(),
                decay: false,
            });
            out.push(ParamView {
                name: join(prefix, &names[1]),
                data: layer.shift.view().into_dyn(),
                decay: false,
            });
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        let names: Vec<Vec<String>> = (1..=self.layers.len()).map(|l| self.layer_param_names(l)).collect();
        for (layer, names) in self.layers.iter_mut().zip(names) {
            out.push(ParamViewMut {
                name: join(prefix, &names[0]),
                data: layer.scale.view_mut().into_dyn(),
                decay: false,
            });
            out.push(ParamViewMut {
                name: join(prefix, &names[1]),
                data: layer.shift.view_mut().into_dyn(),
                decay: false,
            });
        }
    }
}

/// Names of exactly the parameters in the policy's trainable layers.
pub fn apply_freeze_policy(encoder: &EncoderStack, policy: &FreezePolicy) -> Result<BTreeSet<String>, EncoderError> {
    if policy.total_layers != encoder.num_layers() {
        return Err(EncoderError::LayerCountMismatch {
            policy: policy.total_layers,
            encoder: encoder.num_layers(),
        });
    }
    let mut names = BTreeSet::new();
    for &layer in &policy.trainable_layers {
        if layer == 0 || layer > encoder.num_layers() {
            return Err(EncoderError::LayerOutOfRange {
                layer,
                total: encoder.num_layers(),
            });
        }
        names.extend(encoder.layer_param_names(layer));
    }
    Ok(names)
}
