//! Hybrid fusion head.
//!
//! ```text
//! image ─ Linear ─┐                                       ┌─ y_img ─┐
//!                 ├─ +type ─ MHSA(2 tokens) ─ +res ─ LN ──┤         ├─ gate ─ Σ g·y ─ MLP ─ logits
//! text ── Linear ─┘                                       └─ y_txt ─┘
//! ```
//!
//! The two latent vectors form a two-token sequence; modality-type embeddings
//! break the permutation symmetry. The gate is a linear map of
//! `[y_img; y_txt]` to two logits followed by a softmax.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{MlpCache, MlpClassifier};
use super::{AttentionMap, FusionError, GateWeights, HybridHeadConfig, LatentPair};
use crate::nn::{join, softmax, LayerNorm, LayerNormCache, Linear, ParamView, ParamViewMut, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentProjection {
    pub image: Linear,
    pub text: Linear,
}

impl LatentProjection {
    pub fn new<R: Rng>(rng: &mut R, image_dim: usize, text_dim: usize, latent_dim: usize) -> Self {
        Self {
            image: Linear::new(rng, image_dim, latent_dim),
            text: Linear::new(rng, text_dim, latent_dim),
        }
    }

    /// Independent affine maps: `z_img` depends only on the image input.
    pub fn project(&self, image: &[f64], text: &[f64]) -> Result<LatentPair, FusionError> {
        check_dim(self.image.input_dim(), image.len())?;
        check_dim(self.text.input_dim(), text.len())?;
        let zi = self.image.forward(&row(image));
        let zt = self.text.forward(&row(text));
        Ok(LatentPair {
            z_img: zi.row(0).to_vec(),
            z_txt: zt.row(0).to_vec(),
        })
    }
}

impl Parameters for LatentProjection {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.image.visit(&join(prefix, "image"), out);
        self.text.visit(&join(prefix, "text"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.image.visit_mut(&join(prefix, "image"), out);
        self.text.visit_mut(&join(prefix, "text"), out);
    }
}

/// Multi-head self-attention over the (image, text) token pair, followed by
/// one residual connection and post-LayerNorm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModalAttention {
    pub num_heads: usize,
    pub type_image: Array1<f64>,
    pub type_text: Array1<f64>,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm: LayerNorm,
}

pub struct AttentionCache {
    h: [Array2<f64>; 2],
    q: [Array2<f64>; 2],
    k: [Array2<f64>; 2],
    v: [Array2<f64>; 2],
    /// `B × heads` row-stochastic 2×2 maps, sample-major.
    maps: Vec<AttentionMap>,
    o: [Array2<f64>; 2],
    ln: [LayerNormCache; 2],
}

impl AttentionCache {
    pub fn maps(&self) -> &[AttentionMap] {
        &self.maps
    }
}

impl CrossModalAttention {
    pub fn new<R: Rng>(rng: &mut R, latent_dim: usize, num_heads: usize) -> Self {
        let bound = 1.0 / (latent_dim as f64).sqrt();
        let mut emb = || Array1::from_shape_simple_fn(latent_dim, || rng.random_range(-bound..=bound));
        let type_image = emb();
        let type_text = emb();
        Self {
            num_heads,
            type_image,
            type_text,
            query: Linear::new(rng, latent_dim, latent_dim),
            key: Linear::new(rng, latent_dim, latent_dim),
            value: Linear::new(rng, latent_dim, latent_dim),
            output: Linear::new(rng, latent_dim, latent_dim),
            norm: LayerNorm::new(latent_dim),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.type_image.len()
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim() / self.num_heads
    }

    pub fn forward(&self, z_img: &Array2<f64>, z_txt: &Array2<f64>) -> (Array2<f64>, Array2<f64>, AttentionCache) {
        let h = [z_img + &self.type_image, z_txt + &self.type_text];
        let q = [self.query.forward(&h[0]), self.query.forward(&h[1])];
        let k = [self.key.forward(&h[0]), self.key.forward(&h[1])];
        let v = [self.value.forward(&h[0]), self.value.forward(&h[1])];

        let batch = z_img.nrows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut o = [Array2::zeros(z_img.raw_dim()), Array2::zeros(z_img.raw_dim())];
        let mut maps = Vec::with_capacity(batch * self.num_heads);
        for b in 0..batch {
            for head in 0..self.num_heads {
                let cols = head * dh..(head + 1) * dh;
                let mut map = [[0.0; 2]; 2];
                for m in 0..2 {
                    let qm = q[m].slice(s![b, cols.clone()]);
                    let scores = [
                        qm.dot(&k[0].slice(s![b, cols.clone()])) * scale,
                        qm.dot(&k[1].slice(s![b, cols.clone()])) * scale,
                    ];
                    let a = softmax(&scores);
                    map[m] = [a[0], a[1]];
                    let out = &v[0].slice(s![b, cols.clone()]) * a[0] + &v[1].slice(s![b, cols.clone()]) * a[1];
                    o[m].slice_mut(s![b, cols.clone()]).assign(&out);
                }
                maps.push(map);
            }
        }

        let u0 = &h[0] + &self.output.forward(&o[0]);
        let u1 = &h[1] + &self.output.forward(&o[1]);
        let (y0, c0) = self.norm.forward(&u0);
        let (y1, c1) = self.norm.forward(&u1);
        (
            y0,
            y1,
            AttentionCache {
                h,
                q,
                k,
                v,
                maps,
                o,
                ln: [c0, c1],
            },
        )
    }

    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy_img: &Array2<f64>,
        dy_txt: &Array2<f64>,
        grad: &mut CrossModalAttention,
    ) -> (Array2<f64>, Array2<f64>) {
        let du = [
            self.norm.backward(&cache.ln[0], dy_img, &mut grad.norm),
            self.norm.backward(&cache.ln[1], dy_txt, &mut grad.norm),
        ];
        let do_ = [
            self.output.backward(&cache.o[0], &du[0], &mut grad.output),
            self.output.backward(&cache.o[1], &du[1], &mut grad.output),
        ];

        let batch = dy_img.nrows();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let zeros = || Array2::<f64>::zeros(dy_img.raw_dim());
        let mut dq = [zeros(), zeros()];
        let mut dk = [zeros(), zeros()];
        let mut dv = [zeros(), zeros()];
        for b in 0..batch {
            for head in 0..self.num_heads {
                let cols = head * dh..(head + 1) * dh;
                let a = cache.maps[b * self.num_heads + head];
                for m in 0..2 {
                    let dom = do_[m].slice(s![b, cols.clone()]);
                    let da = [
                        dom.dot(&cache.v[0].slice(s![b, cols.clone()])),
                        dom.dot(&cache.v[1].slice(s![b, cols.clone()])),
                    ];
                    let mean = a[m][0] * da[0] + a[m][1] * da[1];
                    for n in 0..2 {
                        let mut dvn = dv[n].slice_mut(s![b, cols.clone()]);
                        dvn.scaled_add(a[m][n], &dom);
                        let ds = a[m][n] * (da[n] - mean) * scale;
                        dq[m]
                            .slice_mut(s![b, cols.clone()])
                            .scaled_add(ds, &cache.k[n].slice(s![b, cols.clone()]));
                        dk[n]
                            .slice_mut(s![b, cols.clone()])
                            .scaled_add(ds, &cache.q[m].slice(s![b, cols.clone()]));
                    }
                }
            }
        }

        let mut dh_tok = du;
        for m in 0..2 {
            dh_tok[m] += &self.query.backward(&cache.h[m], &dq[m], &mut grad.query);
            dh_tok[m] += &self.key.backward(&cache.h[m], &dk[m], &mut grad.key);
            dh_tok[m] += &self.value.backward(&cache.h[m], &dv[m], &mut grad.value);
        }
        grad.type_image += &dh_tok[0].sum_axis(Axis(0));
        grad.type_text += &dh_tok[1].sum_axis(Axis(0));
        let [di, dt] = dh_tok;
        (di, dt)
    }

    /// Attended pair plus one 2×2 map per head (rows: query token
    /// image/text, columns: key token image/text).
    pub fn attend(&self, pair: &LatentPair) -> Result<(LatentPair, Vec<AttentionMap>), FusionError> {
        check_dim(self.latent_dim(), pair.z_img.len())?;
        check_dim(self.latent_dim(), pair.z_txt.len())?;
        let (yi, yt, cache) = self.forward(&row(&pair.z_img), &row(&pair.z_txt));
        Ok((
            LatentPair {
                z_img: yi.row(0).to_vec(),
                z_txt: yt.row(0).to_vec(),
            },
            cache.maps,
        ))
    }
}

impl Parameters for CrossModalAttention {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView {
            name: join(prefix, "type_image"),
            data: self.type_image.view().into_dyn(),
            decay: false,
        });
        out.push(ParamView {
            name: join(prefix, "type_text"),
            data: self.type_text.view().into_dyn(),
            decay: false,
        });
        self.query.visit(&join(prefix, "query"), out);
        self.key.visit(&join(prefix, "key"), out);
        self.value.visit(&join(prefix, "value"), out);
        self.output.visit(&join(prefix, "output"), out);
        self.norm.visit(&join(prefix, "norm"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut {
            name: join(prefix, "type_image"),
            data: self.type_image.view_mut().into_dyn(),
            decay: false,
        });
        out.push(ParamViewMut {
            name: join(prefix, "type_text"),
            data: self.type_text.view_mut().into_dyn(),
            decay: false,
        });
        self.query.visit_mut(&join(prefix, "query"), out);
        self.key.visit_mut(&join(prefix, "key"), out);
        self.value.visit_mut(&join(prefix, "value"), out);
        self.output.visit_mut(&join(prefix, "output"), out);
        self.norm.visit_mut(&join(prefix, "norm"), out);
    }
}

/// Instance-level modality gate: `softmax(W [y_img; y_txt] + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateNetwork {
    pub linear: Linear,
}

impl GateNetwork {
    pub fn new<R: Rng>(rng: &mut R, latent_dim: usize) -> Self {
        Self {
            linear: Linear::new(rng, 2 * latent_dim, 2),
        }
    }

    /// Returns `(gate input, gate probabilities, fused)`.
    fn forward(&self, yi: &Array2<f64>, yt: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let input = concatenate(Axis(1), &[yi.view(), yt.view()]).expect("matching rows");
        let logits = self.linear.forward(&input);
        let gates = crate::nn::softmax_rows(&logits);
        let fused = yi * &gates.column(0).insert_axis(Axis(1)) + yt * &gates.column(1).insert_axis(Axis(1));
        (input, gates, fused)
    }

    /// `(fused, gate)` for one pair.
    pub fn fuse(&self, pair: &LatentPair) -> Result<(Vec<f64>, GateWeights), FusionError> {
        let d = self.linear.input_dim() / 2;
        check_dim(d, pair.z_img.len())?;
        check_dim(d, pair.z_txt.len())?;
        let (_, gates, fused) = self.forward(&row(&pair.z_img), &row(&pair.z_txt));
        Ok((
            fused.row(0).to_vec(),
            GateWeights {
                g_img: gates[[0, 0]],
                g_txt: gates[[0, 1]],
            },
        ))
    }
}

impl Parameters for GateNetwork {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.linear.visit(prefix, out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.linear.visit_mut(prefix, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridHead {
    pub projection: LatentProjection,
    pub attention: CrossModalAttention,
    pub gate: GateNetwork,
    pub classifier: MlpClassifier,
}

pub struct HybridCache {
    xi: Array2<f64>,
    xt: Array2<f64>,
    attention: AttentionCache,
    yi: Array2<f64>,
    yt: Array2<f64>,
    gate_input: Array2<f64>,
    gates: Array2<f64>,
    mlp: MlpCache,
}

impl HybridCache {
    pub fn gates(&self) -> &Array2<f64> {
        &self.gates
    }

    pub fn attention_maps(&self) -> &[AttentionMap] {
        self.attention.maps()
    }
}

impl HybridHead {
    pub fn new<R: Rng>(rng: &mut R, image_dim: usize, text_dim: usize, cfg: &HybridHeadConfig) -> Result<Self, FusionError> {
        cfg.validate()?;
        let d = cfg.latent_dim;
        Ok(Self {
            projection: LatentProjection::new(rng, image_dim, text_dim, d),
            attention: CrossModalAttention::new(rng, d, cfg.num_heads),
            gate: GateNetwork::new(rng, d),
            classifier: MlpClassifier::new(rng, d, cfg.num_classes, cfg.dropout_rate),
        })
    }

    pub fn forward<R: Rng>(&self, xi: &Array2<f64>, xt: &Array2<f64>, rng: Option<&mut R>) -> (Array2<f64>, HybridCache) {
        let zi = self.projection.image.forward(xi);
        let zt = self.projection.text.forward(xt);
        let (yi, yt, attention) = self.attention.forward(&zi, &zt);
        let (gate_input, gates, fused) = self.gate.forward(&yi, &yt);
        let (logits, mlp) = self.classifier.forward(&fused, rng);
        (
            logits,
            HybridCache {
                xi: xi.clone(),
                xt: xt.clone(),
                attention,
                yi,
                yt,
                gate_input,
                gates,
                mlp,
            },
        )
    }

    /// Returns `(∂L/∂image_input, ∂L/∂text_input)`.
    pub fn backward(&self, cache: &HybridCache, dlogits: &Array2<f64>, grad: &mut HybridHead) -> (Array2<f64>, Array2<f64>) {
        let dfused = self.classifier.backward(&cache.mlp, dlogits, &mut grad.classifier);
        let g0 = cache.gates.column(0).insert_axis(Axis(1));
        let g1 = cache.gates.column(1).insert_axis(Axis(1));
        let mut dyi = &dfused * &g0;
        let mut dyt = &dfused * &g1;

        // Softmax over the two gate logits.
        let dg0 = (&dfused * &cache.yi).sum_axis(Axis(1));
        let dg1 = (&dfused * &cache.yt).sum_axis(Axis(1));
        let mut dlogit = Array2::zeros(cache.gates.raw_dim());
        for b in 0..dlogit.nrows() {
            let (p0, p1) = (cache.gates[[b, 0]], cache.gates[[b, 1]]);
            let mean = p0 * dg0[b] + p1 * dg1[b];
            dlogit[[b, 0]] = p0 * (dg0[b] - mean);
            dlogit[[b, 1]] = p1 * (dg1[b] - mean);
        }
        let dinput = self.gate.linear.backward(&cache.gate_input, &dlogit, &mut grad.gate.linear);
        let d = cache.yi.ncols();
        dyi += &dinput.slice(s![.., ..d]);
        dyt += &dinput.slice(s![.., d..]);

        let (dzi, dzt) = self.attention.backward(&cache.attention, &dyi, &dyt, &mut grad.attention);
        let dxi = self.projection.image.backward(&cache.xi, &dzi, &mut grad.projection.image);
        let dxt = self.projection.text.backward(&cache.xt, &dzt, &mut grad.projection.text);
        (dxi, dxt)
    }
}

impl Parameters for HybridHead {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.projection.visit(&join(prefix, "projection"), out);
        self.attention.visit(&join(prefix, "attention"), out);
        self.gate.visit(&join(prefix, "gate"), out);
        self.classifier.visit(&join(prefix, "classifier"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        self.projection.visit_mut(&join(prefix, "projection"), out);
        self.attention.visit_mut(&join(prefix, "attention"), out);
        self.gate.visit_mut(&join(prefix, "gate"), out);
        self.classifier.visit_mut(&join(prefix, "classifier"), out);
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array1::from(v.to_vec()).insert_axis(Axis(0))
}

fn check_dim(expected: usize, got: usize) -> Result<(), FusionError> {
    if expected == got {
        Ok(())
    } else {
        Err(FusionError::DimensionMismatch { expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::smoothed_weighted_ce_batch;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, heads: usize) -> HybridHeadConfig {
        HybridHeadConfig {
            latent_dim: d,
            num_heads: heads,
            dropout_rate: 0.5,
            num_classes: 2,
        }
    }

    fn rand_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((b, d), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn projection_shapes_and_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LatentProjection::new(&mut rng, 512, 1024, 256);
        let img = vec![0.3; 512];
        let a = p.project(&img, &vec![0.1; 1024]).unwrap();
        assert_eq!((a.z_img.len(), a.z_txt.len()), (256, 256));
        let b = p.project(&img, &vec![-0.7; 1024]).unwrap();
        assert_eq!(a.z_img, b.z_img);
        assert_ne!(a.z_txt, b.z_txt);
        let zero = p.project(&[0.0; 512], &vec![0.0; 1024]).unwrap();
        assert_eq!(zero.z_img, p.image.bias.to_vec());
        assert_eq!(zero.z_txt, p.text.bias.to_vec());
    }

    #[test]
    fn attention_head_dim_and_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let att = CrossModalAttention::new(&mut rng, 256, 4);
        assert_eq!(att.head_dim(), 64);
        let pair = LatentPair {
            z_img: (0..256).map(|i| (i as f64 * 0.37).sin()).collect(),
            z_txt: (0..256).map(|i| (i as f64 * 0.11).cos()).collect(),
        };
        let (out, maps) = att.attend(&pair).unwrap();
        assert_eq!(out.z_img.len(), 256);
        assert_eq!(maps.len(), 4);
        for map in maps {
            for r in map {
                assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
                assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn gate_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gate = GateNetwork::new(&mut rng, 4);
        let pair = LatentPair {
            z_img: vec![1.0, 2.0, 3.0, 4.0],
            z_txt: vec![-1.0, 0.0, 5.0, 2.0],
        };
        gate.linear.weight.fill(0.0);
        gate.linear.bias = ndarray::arr1(&[0.7, 0.7]);
        let (fused, g) = gate.fuse(&pair).unwrap();
        assert_eq!((g.g_img, g.g_txt), (0.5, 0.5));
        assert_eq!(fused, vec![0.0, 1.0, 4.0, 3.0]);

        gate.linear.bias = ndarray::arr1(&[2.0, 0.0]);
        let (_, g) = gate.fuse(&pair).unwrap();
        let e2 = 2.0f64.exp();
        assert!((g.g_img - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((g.g_img - 0.8808).abs() < 1e-4);
        assert!((g.g_txt - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn gate_saturates_to_dominant_modality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gate = GateNetwork::new(&mut rng, 8);
        let mut checked = 0;
        for trial in 0..40 {
            let pair = LatentPair {
                z_img: (0..8).map(|i| ((i + trial) as f64).sin()).collect(),
                z_txt: (0..8).map(|i| ((i * trial) as f64).cos()).collect(),
            };
            let mut hot = gate.clone();
            let (_, g1) = hot.fuse(&pair).unwrap();
            hot.linear.weight *= 50.0;
            hot.linear.bias *= 50.0;
            let (fused, g) = hot.fuse(&pair).unwrap();
            // at t = 50 the one-hot limit is within 1e-6 only once the base logit gap exceeds ln(1e6)/50
            if (g1.g_img / g1.g_txt).ln().abs() < 0.3 {
                continue;
            }
            checked += 1;
            let dominant = if g.g_img > g.g_txt { &pair.z_img } else { &pair.z_txt };
            assert!(g.g_img.max(g.g_txt) > 1.0 - 1e-6, "trial {trial}: {g:?}");
            for (f, z) in fused.iter().zip(dominant) {
                assert!((f - z).abs() < 1e-6 * (1.0 + z.abs()) * 10.0);
            }
        }
        assert!(checked >= 5, "only {checked} trials had a usable logit gap");
    }

    proptest! {
        #[test]
        fn gate_stays_on_simplex(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gate = GateNetwork::new(&mut rng, 6);
            let pair = LatentPair {
                z_img: (0..6).map(|_| rng.random_range(-scale..scale)).collect(),
                z_txt: (0..6).map(|_| rng.random_range(-scale..scale)).collect(),
            };
            let (_, g) = gate.fuse(&pair).unwrap();
            prop_assert!((0.0..=1.0).contains(&g.g_img) && (0.0..=1.0).contains(&g.g_txt));
            prop_assert!((g.g_img + g.g_txt - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn attention_preserves_shape(heads in 1usize..5, per_head in 1usize..6, seed in any::<u64>()) {
            let d = heads * per_head;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let att = CrossModalAttention::new(&mut rng, d, heads);
            let zi = rand_rows(&mut rng, 3, d);
            let zt = rand_rows(&mut rng, 3, d);
            let (yi, yt, cache) = att.forward(&zi, &zt);
            prop_assert_eq!(yi.dim(), (3, d));
            prop_assert_eq!(yt.dim(), (3, d));
            prop_assert_eq!(cache.maps().len(), 3 * heads);
        }
    }

    /// Flattened parameter vector in traversal order.
    fn flat<P: Parameters>(p: &P) -> Vec<f64> {
        p.params().iter().flat_map(|v| v.data.iter().copied().collect::<Vec<_>>()).collect()
    }

    fn set_flat<P: Parameters>(p: &mut P, values: &[f64]) {
        let mut it = values.iter();
        for v in p.params_mut() {
            let mut d = v.data;
            for x in d.iter_mut() {
                *x = *it.next().unwrap();
            }
        }
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let att = CrossModalAttention::new(&mut rng, 8, 2);
        let zi = rand_rows(&mut rng, 3, 8);
        let zt = rand_rows(&mut rng, 3, 8);
        let wi = rand_rows(&mut rng, 3, 8);
        let wt = rand_rows(&mut rng, 3, 8);
        let loss = |a: &CrossModalAttention, zi: &Array2<f64>, zt: &Array2<f64>| {
            let (yi, yt, _) = a.forward(zi, zt);
            (&yi * &wi).sum() + (&yt * &wt).sum()
        };
        let (_, _, cache) = att.forward(&zi, &zt);
        let mut grad = att.zeroed();
        let (dzi, _) = att.backward(&cache, &wi, &wt, &mut grad);

        let base = flat(&att);
        let analytic = flat(&grad);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = att.clone();
            let mut v = base.clone();
            v[i] += h;
            set_flat(&mut p, &v);
            let up = loss(&p, &zi, &zt);
            v[i] -= 2.0 * h;
            set_flat(&mut p, &v);
            let down = loss(&p, &zi, &zt);
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
        }
        assert!(worst < 1e-4, "params: max rel err {worst}");

        for j in 0..8 {
            let mut up = zi.clone();
            up[[1, j]] += h;
            let mut down = zi.clone();
            down[[1, j]] -= h;
            let num = (loss(&att, &up, &zt) - loss(&att, &down, &zt)) / (2.0 * h);
            assert!(rel_err(dzi[[1, j]], num) < 1e-4);
        }
    }

    #[test]
    fn full_head_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let head = HybridHead::new(&mut rng, 6, 10, &cfg(8, 2)).unwrap();
        let xi = rand_rows(&mut rng, 4, 6);
        let xt = rand_rows(&mut rng, 4, 10);
        let targets = [0usize, 1, 1, 0];
        let weights = [1.2439, 1.0];
        let loss = |h: &HybridHead| {
            let (logits, _) = h.forward::<ChaCha8Rng>(&xi, &xt, None);
            smoothed_weighted_ce_batch(&logits, &targets, &weights, 0.1).0
        };
        let (logits, cache) = head.forward::<ChaCha8Rng>(&xi, &xt, None);
        let (_, dlogits) = smoothed_weighted_ce_batch(&logits, &targets, &weights, 0.1);
        let mut grad = head.zeroed();
        head.backward(&cache, &dlogits, &mut grad);

        let base = flat(&head);
        let analytic = flat(&grad);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = head.clone();
            let mut v = base.clone();
            v[i] += h;
            set_flat(&mut p, &v);
            let up = loss(&p);
            v[i] -= 2.0 * h;
            set_flat(&mut p, &v);
            let down = loss(&p);
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
        }
        assert!(worst < 1e-4, "max rel err {worst}");
    }
}
