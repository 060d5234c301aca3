use serde::{Deserialize, Serialize};

use super::{EvalError, Prediction};
use crate::fusion::{AttentionMap, FusionModel, GateWeights};
use crate::training::EmbeddedDataset;

pub const GATE_HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub samples: usize,
    /// Share of samples with `g_txt > 0.5` (ties are not text-dominant).
    pub fraction_text_dominant: f64,
    pub mean_g_img: f64,
    pub mean_g_txt: f64,
    /// Counts of `g_txt` over equal-width bins of [0, 1]; 1.0 lands in the
    /// last bin.
    pub g_txt_histogram: [usize; GATE_HISTOGRAM_BINS],
    /// Per-head attention maps averaged over samples. Rows are query
    /// tokens (image, text), columns key tokens.
    pub mean_attention: Vec<AttentionMap>,
}

pub fn summarize_gates(gates: &[GateWeights], attention: &[Vec<AttentionMap>]) -> GateSummary {
    let n = gates.len();
    let mut histogram = [0; GATE_HISTOGRAM_BINS];
    for g in gates {
        let bin = ((g.g_txt * GATE_HISTOGRAM_BINS as f64) as usize).min(GATE_HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }
    let mean = |f: &dyn Fn(&GateWeights) -> f64| {
        if n == 0 {
            0.0
        } else {
            gates.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let heads = attention.first().map_or(0, Vec::len);
    let mut mean_attention = vec![[[0.0; 2]; 2]; heads];
    for maps in attention {
        for (acc, m) in mean_attention.iter_mut().zip(maps) {
            for r in 0..2 {
                for c in 0..2 {
                    acc[r][c] += m[r][c] / attention.len() as f64;
                }
            }
        }
    }
    GateSummary {
        samples: n,
        fraction_text_dominant: mean(&|g| if g.g_txt > 0.5 { 1.0 } else { 0.0 }),
        mean_g_img: mean(&|g| g.g_img),
        mean_g_txt: mean(&|g| g.g_txt),
        g_txt_histogram: histogram,
        mean_attention,
    }
}

/// Gate statistics of a hybrid model over `data`.
pub fn gating_stats(model: &FusionModel, data: &EmbeddedDataset) -> Result<GateSummary, EvalError> {
    if !model.config.is_hybrid() {
        return Err(EvalError::NoGate(model.config));
    }
    let preds = crate::training::TrainedModel::Single(model.clone()).predict(data)?;
    Ok(summarize_predictions(&preds))
}

/// Gate statistics over the predictions that carry a gate.
pub fn summarize_predictions(preds: &[Prediction]) -> GateSummary {
    let gates: Vec<GateWeights> = preds.iter().filter_map(|p| p.gate).collect();
    let attention: Vec<Vec<AttentionMap>> = preds.iter().filter_map(|p| p.attention.clone()).collect();
    summarize_gates(&gates, &attention)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(t: f64) -> GateWeights {
        GateWeights { g_img: 1.0 - t, g_txt: t }
    }

    #[test]
    fn strict_dominance_rule() {
        assert_eq!(summarize_gates(&[g(0.5); 4], &[]).fraction_text_dominant, 0.0);
        assert_eq!(summarize_gates(&[g(0.7); 4], &[]).fraction_text_dominant, 1.0);
        let s = summarize_gates(&[g(0.7), g(0.4), g(0.9), g(0.2)], &[]);
        assert_eq!(s.fraction_text_dominant, 0.5);
        assert!((s.mean_g_txt - 0.55).abs() < 1e-12);
        assert_eq!(s.g_txt_histogram.iter().sum::<usize>(), 4);
        assert_eq!(s.g_txt_histogram[9], 1);
    }

    #[test]
    fn attention_is_averaged_per_head() {
        let a = vec![[[1.0, 0.0], [0.5, 0.5]]; 2];
        let b = vec![[[0.0, 1.0], [0.5, 0.5]]; 2];
        let s = summarize_gates(&[g(0.6), g(0.6)], &[a, b]);
        assert_eq!(s.mean_attention.len(), 2);
        assert_eq!(s.mean_attention[0], [[0.5, 0.5], [0.5, 0.5]]);
    }
}
