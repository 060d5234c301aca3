use std::collections::BTreeSet;

use ndarray::{ArrayD, Zip};

use crate::nn::Parameters;

/// Adam with decoupled weight decay. Only parameters named in the trainable
/// set are touched; decay applies to parameters flagged `decay` (2-D weight
/// matrices), never to biases, norms or embeddings.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    trainable: Vec<bool>,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new<P: Parameters>(model: &P, trainable: &BTreeSet<String>, weight_decay: f64) -> Self {
        let params = model.params();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            trainable: params.iter().map(|p| trainable.contains(&p.name)).collect(),
            m: params.iter().map(|p| ArrayD::zeros(p.data.raw_dim())).collect(),
            v: params.iter().map(|p| ArrayD::zeros(p.data.raw_dim())).collect(),
        }
    }

    pub fn step<P: Parameters>(&mut self, model: &mut P, grad: &P, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let grads = grad.params();
        for (i, (p, g)) in model.params_mut().into_iter().zip(grads).enumerate() {
            if !self.trainable[i] {
                continue;
            }
            let shrink = if p.decay { 1.0 - lr * self.weight_decay } else { 1.0 };
            let mut data = p.data;
            Zip::from(&mut data)
                .and(&g.data)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w *= shrink;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}
