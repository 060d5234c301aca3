//! Small dense building blocks with explicit backward passes.
//!
//! Everything is `f64` and batched by rows: an input of shape `(B, D)` holds
//! `B` samples.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub struct ParamView<'a> {
    pub name: String,
    pub data: ArrayViewD<'a, f64>,
    pub decay: bool,
}

pub struct ParamViewMut<'a> {
    pub name: String,
    pub data: ArrayViewMutD<'a, f64>,
    pub decay: bool,
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Named traversal over every learnable array. Traversal order is fixed per
/// type, so a gradient container of the same type lines up entry by entry.
pub trait Parameters {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>);
    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>);

    fn params(&self) -> Vec<ParamView<'_>> {
        let mut v = Vec::new();
        self.visit("", &mut v);
        v
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut v = Vec::new();
        self.visit_mut("", &mut v);
        v
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for p in z.params_mut() {
            let mut d = p.data;
            d.fill(0.0);
        }
        z
    }

    /// `self += other`, entry by entry.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (mut a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.data += &b.data;
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` initialization.
pub fn fan_in_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// `y = x Wᵀ + b`, weight stored `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        let weight = fan_in_uniform(rng, output, input, input);
        let bias = fan_in_uniform(rng, 1, output, input).row(0).to_owned();
        Self { weight, bias }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl Parameters for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView {
            name: join(prefix, "weight"),
            data: self.weight.view().into_dyn(),
            decay: true,
        });
        out.push(ParamView {
            name: join(prefix, "bias"),
            data: self.bias.view().into_dyn(),
            decay: false,
        });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut {
            name: join(prefix, "weight"),
            data: self.weight.view_mut().into_dyn(),
            decay: true,
        });
        out.push(ParamViewMut {
            name: join(prefix, "bias"),
            data: self.bias.view_mut().into_dyn(),
            decay: false,
        });
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *s;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let mean_g = g.sum() / d;
            let mean_gx = g.dot(&xh) / d;
            let s = cache.inv_std[i];
            for j in 0..row.len() {
                row[j] = s * (g[j] - mean_g - xh[j] * mean_gx);
            }
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        out.push(ParamView {
            name: join(prefix, "gamma"),
            data: self.gamma.view().into_dyn(),
            decay: false,
        });
        out.push(ParamView {
            name: join(prefix, "beta"),
            data: self.beta.view().into_dyn(),
            decay: false,
        });
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        out.push(ParamViewMut {
            name: join(prefix, "gamma"),
            data: self.gamma.view_mut().into_dyn(),
            decay: false,
        });
        out.push(ParamViewMut {
            name: join(prefix, "beta"),
            data: self.beta.view_mut().into_dyn(),
            decay: false,
        });
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let p = softmax(&row.to_vec());
        row.assign(&Array1::from(p));
    }
    out
}

/// Inverted-dropout mask: kept entries hold `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), rate: f64) -> Array2<f64> {
    if rate <= 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

pub fn rows_to_array(rows: &[&[f32]]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), cols));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            *d = f64::from(s);
        }
    }
    out
}
