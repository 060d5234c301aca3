use std::collections::BTreeSet;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{MlpCache, MlpClassifier};
use super::hybrid::{HybridCache, HybridHead};
use super::{FusionError, FusionOutput, GateWeights, HybridHeadConfig, ModelConfigId};
use crate::encoders::{
    apply_freeze_policy, EncoderStack, EncoderStackCache, FreezePolicy, ImageEmbedding, TextEmbedding,
    IMAGE_EMBED_DIM, TEXT_EMBED_DIM,
};
use crate::nn::{join, ParamView, ParamViewMut, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum Head {
    /// M1–M4: one MLP over the (possibly concatenated) embeddings.
    Mlp(MlpClassifier),
    /// M7/M8.
    Hybrid(HybridHead),
}

/// A trainable single-model configuration: the adaptable upper layers of
/// the encoders it reads plus its classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: ModelConfigId,
    pub head_config: HybridHeadConfig,
    pub image_stack: Option<EncoderStack>,
    pub text_stack: Option<EncoderStack>,
    pub image_freeze: FreezePolicy,
    pub text_freeze: FreezePolicy,
    pub head: Head,
}

pub struct ModelCache {
    image: Option<EncoderStackCache>,
    text: Option<EncoderStackCache>,
    head: HeadCache,
}

#[allow(clippy::large_enum_variant)]
enum HeadCache {
    Mlp(MlpCache),
    Hybrid(Box<HybridCache>),
}

impl ModelCache {
    /// Per-sample gates `(B, 2)` for hybrid heads.
    pub fn gates(&self) -> Option<&Array2<f64>> {
        match &self.head {
            HeadCache::Hybrid(c) => Some(c.gates()),
            HeadCache::Mlp(_) => None,
        }
    }
}

impl FusionModel {
    pub fn new<R: Rng>(rng: &mut R, config: ModelConfigId, head_config: HybridHeadConfig) -> Result<Self, FusionError> {
        Self::with_freeze(
            rng,
            config,
            head_config,
            FreezePolicy::image_default(),
            FreezePolicy::text_default(),
        )
    }

    pub fn with_freeze<R: Rng>(
        rng: &mut R,
        config: ModelConfigId,
        head_config: HybridHeadConfig,
        image_freeze: FreezePolicy,
        text_freeze: FreezePolicy,
    ) -> Result<Self, FusionError> {
        if config.is_ensemble() {
            return Err(FusionError::EnsembleConfig(config));
        }
        head_config.validate()?;
        let k = head_config.num_classes;
        let dropout = head_config.dropout_rate;
        let head = match config {
            ModelConfigId::M1 => Head::Mlp(MlpClassifier::new(rng, TEXT_EMBED_DIM, k, dropout)),
            ModelConfigId::M2 | ModelConfigId::M3 => Head::Mlp(MlpClassifier::new(rng, IMAGE_EMBED_DIM, k, dropout)),
            ModelConfigId::M4 => Head::Mlp(MlpClassifier::new(rng, IMAGE_EMBED_DIM + TEXT_EMBED_DIM, k, dropout)),
            _ => Head::Hybrid(HybridHead::new(rng, IMAGE_EMBED_DIM, TEXT_EMBED_DIM, &head_config)?),
        };
        let model = Self {
            config,
            head_config,
            image_stack: config.uses_image().then(EncoderStack::image),
            text_stack: config.uses_text().then(EncoderStack::text),
            image_freeze,
            text_freeze,
            head,
        };
        model.trainable()?;
        Ok(model)
    }

    /// Input width of the classifier MLP.
    pub fn classifier_input_dim(&self) -> usize {
        match &self.head {
            Head::Mlp(m) => m.input_dim(),
            Head::Hybrid(h) => h.classifier.input_dim(),
        }
    }

    /// Names of every parameter the optimizer may update: the whole head
    /// plus the layers the freeze policies leave open.
    pub fn trainable(&self) -> Result<BTreeSet<String>, FusionError> {
        let mut names = BTreeSet::new();
        let bad = |e: crate::encoders::EncoderError| FusionError::InvalidHeadConfig(e.to_string());
        if let Some(stack) = &self.image_stack {
            names.extend(apply_freeze_policy(stack, &self.image_freeze).map_err(bad)?);
        }
        if let Some(stack) = &self.text_stack {
            names.extend(apply_freeze_policy(stack, &self.text_freeze).map_err(bad)?);
        }
        let mut head = Vec::new();
        self.visit_head("head", &mut head);
        names.extend(head.into_iter().map(|p| p.name));
        Ok(names)
    }

    fn visit_head<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        match &self.head {
            Head::Mlp(m) => m.visit(prefix, out),
            Head::Hybrid(h) => h.visit(prefix, out),
        }
    }

    fn require<'x>(&self, x: Option<&'x Array2<f64>>, modality: &'static str, dim: usize) -> Result<&'x Array2<f64>, FusionError> {
        let x = x.ok_or(FusionError::MissingModality {
            config: self.config,
            modality,
        })?;
        if x.ncols() != dim {
            return Err(FusionError::DimensionMismatch {
                expected: dim,
                got: x.ncols(),
            });
        }
        Ok(x)
    }

    /// Batched forward over base embeddings, one sample per row. Modalities
    /// the configuration does not read are ignored. Dropout is active only
    /// when `rng` is given.
    pub fn forward<R: Rng>(
        &self,
        image: Option<&Array2<f64>>,
        text: Option<&Array2<f64>>,
        rng: Option<&mut R>,
    ) -> Result<(Array2<f64>, ModelCache), FusionError> {
        let (img, img_cache) = match &self.image_stack {
            Some(stack) => {
                let x = self.require(image, "image", IMAGE_EMBED_DIM)?;
                let (y, c) = stack.forward(x);
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let (txt, txt_cache) = match &self.text_stack {
            Some(stack) => {
                let x = self.require(text, "text", TEXT_EMBED_DIM)?;
                let (y, c) = stack.forward(x);
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let (logits, head) = match &self.head {
            Head::Mlp(mlp) => {
                let input = match (img, txt) {
                    (Some(i), Some(t)) => concatenate(Axis(1), &[i.view(), t.view()]).expect("equal row counts"),
                    (Some(i), None) => i,
                    (None, Some(t)) => t,
                    (None, None) => unreachable!("every configuration reads a modality"),
                };
                let (l, c) = mlp.forward(&input, rng);
                (l, HeadCache::Mlp(c))
            }
            Head::Hybrid(h) => {
                let (l, c) = h.forward(img.as_ref().expect("hybrid reads images"), txt.as_ref().expect("hybrid reads text"), rng);
                (l, HeadCache::Hybrid(Box::new(c)))
            }
        };
        Ok((
            logits,
            ModelCache {
                image: img_cache,
                text: txt_cache,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`.
    pub fn backward(&self, cache: &ModelCache, dlogits: &Array2<f64>, grad: &mut FusionModel) {
        let (dimg, dtxt) = match (&self.head, &cache.head, &mut grad.head) {
            (Head::Mlp(mlp), HeadCache::Mlp(c), Head::Mlp(g)) => {
                let dx = mlp.backward(c, dlogits, g);
                match (&self.image_stack, &self.text_stack) {
                    (Some(_), Some(_)) => (
                        Some(dx.slice(s![.., ..IMAGE_EMBED_DIM]).to_owned()),
                        Some(dx.slice(s![.., IMAGE_EMBED_DIM..]).to_owned()),
                    ),
                    (Some(_), None) => (Some(dx), None),
                    _ => (None, Some(dx)),
                }
            }
            (Head::Hybrid(h), HeadCache::Hybrid(c), Head::Hybrid(g)) => {
                let (di, dt) = h.backward(c, dlogits, g);
                (Some(di), Some(dt))
            }
            _ => unreachable!("cache and gradient built from the same model"),
        };
        if let (Some(stack), Some(c), Some(g), Some(d)) =
            (&self.image_stack, &cache.image, grad.image_stack.as_mut(), dimg)
        {
            stack.backward(c, &d, g);
        }
        if let (Some(stack), Some(c), Some(g), Some(d)) = (&self.text_stack, &cache.text, grad.text_stack.as_mut(), dtxt)
        {
            stack.backward(c, &d, g);
        }
    }

    /// Inference for one sample.
    pub fn forward_config(
        &self,
        image: Option<&ImageEmbedding>,
        text: Option<&TextEmbedding>,
    ) -> Result<FusionOutput, FusionError> {
        let to_row = |v: &[f32]| crate::nn::rows_to_array(&[v]);
        let img = image.map(|e| to_row(&e.vector));
        let txt = text.map(|e| to_row(&e.vector));
        Ok(self.predict_batch(img.as_ref(), txt.as_ref())?.remove(0))
    }

    /// Inference over a batch of base embeddings.
    pub fn predict_batch(
        &self,
        image: Option<&Array2<f64>>,
        text: Option<&Array2<f64>>,
    ) -> Result<Vec<FusionOutput>, FusionError> {
        let (logits, cache) = self.forward::<rand_chacha::ChaCha8Rng>(image, text, None)?;
        let heads = self.head_config.num_heads;
        Ok(logits
            .rows()
            .into_iter()
            .enumerate()
            .map(|(b, row)| {
                let (gate, attention) = match &cache.head {
                    HeadCache::Hybrid(c) => (
                        Some(GateWeights {
                            g_img: c.gates()[[b, 0]],
                            g_txt: c.gates()[[b, 1]],
                        }),
                        Some(c.attention_maps()[b * heads..(b + 1) * heads].to_vec()),
                    ),
                    HeadCache::Mlp(_) => (None, None),
                };
                FusionOutput {
                    logits: row.to_vec(),
                    gate,
                    attention,
                }
            })
            .collect())
    }
}

impl Parameters for FusionModel {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        if let Some(s) = &self.image_stack {
            s.visit(prefix, out);
        }
        if let Some(s) = &self.text_stack {
            s.visit(prefix, out);
        }
        self.visit_head(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        if let Some(s) = &mut self.image_stack {
            s.visit_mut(prefix, out);
        }
        if let Some(s) = &mut self.text_stack {
            s.visit_mut(prefix, out);
        }
        let head = join(prefix, "head");
        match &mut self.head {
            Head::Mlp(m) => m.visit_mut(&head, out),
            Head::Hybrid(h) => h.visit_mut(&head, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(config: ModelConfigId) -> FusionModel {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        FusionModel::new(&mut rng, config, HybridHeadConfig::new(2)).unwrap()
    }

    fn img(v: f32) -> ImageEmbedding {
        ImageEmbedding {
            vector: (0..512).map(|i| v * (i as f32 * 0.01).sin()).collect(),
        }
    }

    fn txt(v: f32) -> TextEmbedding {
        TextEmbedding {
            vector: (0..1024).map(|i| v * (i as f32 * 0.03).cos() / 16.0).collect(),
        }
    }

    #[test]
    fn early_fusion_input_is_1536() {
        let m = model(ModelConfigId::M4);
        assert_eq!(m.classifier_input_dim(), 1536);
        assert!((854.0 / m.classifier_input_dim() as f64 - 0.556).abs() < 1e-3);
    }

    #[test]
    fn unimodal_heads_ignore_the_other_modality() {
        let m1 = model(ModelConfigId::M1);
        let a = m1.forward_config(Some(&img(1.0)), Some(&txt(1.0))).unwrap();
        let b = m1.forward_config(Some(&img(-3.0)), Some(&txt(1.0))).unwrap();
        let c = m1.forward_config(None, Some(&txt(1.0))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        for id in [ModelConfigId::M2, ModelConfigId::M3] {
            let m = model(id);
            let a = m.forward_config(Some(&img(1.0)), Some(&txt(1.0))).unwrap();
            let b = m.forward_config(Some(&img(1.0)), Some(&txt(-2.0))).unwrap();
            assert_eq!(a.logits, b.logits);
        }
    }

    #[test]
    fn hybrid_output_carries_gate_and_attention() {
        let m = model(ModelConfigId::M7);
        let out = m.forward_config(Some(&img(0.5)), Some(&txt(2.0))).unwrap();
        let g = out.gate.unwrap();
        assert!((g.g_img + g.g_txt - 1.0).abs() < 1e-6);
        let maps = out.attention.unwrap();
        assert_eq!(maps.len(), 4);
        assert!(maps.iter().flatten().all(|r| (r[0] + r[1] - 1.0).abs() < 1e-6));
        assert!(model(ModelConfigId::M4).forward_config(Some(&img(0.5)), Some(&txt(2.0))).unwrap().gate.is_none());
    }

    #[test]
    fn missing_modality_and_ensembles_rejected() {
        assert!(matches!(
            model(ModelConfigId::M7).forward_config(Some(&img(1.0)), None),
            Err(FusionError::MissingModality { modality: "text", .. })
        ));
        assert!(matches!(
            model(ModelConfigId::M2).forward_config(None, Some(&txt(1.0))),
            Err(FusionError::MissingModality { modality: "image", .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for id in [ModelConfigId::M5, ModelConfigId::M6] {
            assert!(matches!(
                FusionModel::new(&mut rng, id, HybridHeadConfig::new(2)),
                Err(FusionError::EnsembleConfig(_))
            ));
        }
    }

    #[test]
    fn trainable_set_follows_freeze_policies() {
        let m = model(ModelConfigId::M7);
        let t = m.trainable().unwrap();
        assert!(t.contains("image_encoder.layers.12.scale"));
        assert!(t.contains("text_encoder.layers.21.shift"));
        assert!(!t.contains("image_encoder.layers.10.scale"));
        assert!(!t.contains("text_encoder.layers.20.scale"));
        assert!(t.contains("head.gate.weight"));
        let m1 = model(ModelConfigId::M1);
        assert!(!m1.trainable().unwrap().iter().any(|n| n.starts_with("image_encoder")));
    }

    #[test]
    fn batch_and_single_inference_agree() {
        let m = model(ModelConfigId::M8);
        let i = crate::nn::rows_to_array(&[&img(1.0).vector, &img(-1.0).vector]);
        let t = crate::nn::rows_to_array(&[&txt(1.0).vector, &txt(0.3).vector]);
        let batch = m.predict_batch(Some(&i), Some(&t)).unwrap();
        let single = m.forward_config(Some(&img(-1.0)), Some(&txt(0.3))).unwrap();
        for (a, b) in batch[1].logits.iter().zip(&single.logits) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
