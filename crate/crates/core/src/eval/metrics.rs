use serde::{Deserialize, Serialize};

use super::EvalError;

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(labels) {
        for index in [p, t] {
            if index >= num_classes {
                return Err(EvalError::ClassOutOfRange { index, num_classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// 0/0 is 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-class and macro precision/recall/F1 plus accuracy. Any undefined
/// ratio counts as 0.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> MetricsReport {
    let k = cm.num_classes();
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c] as f64;
        let predicted: u64 = (0..k).map(|t| cm.counts[t][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let p = ratio(tp, predicted as f64);
        let r = ratio(tp, actual as f64);
        precision.push(p);
        recall.push(r);
        f1.push(ratio(2.0 * p * r, p + r));
    }
    let trace: u64 = (0..k).map(|c| cm.counts[c][c]).sum();
    MetricsReport {
        accuracy: ratio(trace as f64, cm.total() as f64),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

pub fn evaluate(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<MetricsReport, EvalError> {
    Ok(metrics_from_confusion(&confusion(preds, labels, num_classes)?))
}

/// Macro-F1, or 0 when the inputs are unusable.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    evaluate(preds, labels, num_classes).map_or(0.0, |r| r.macro_f1)
}

/// Fold mean with sample standard deviation (n − 1 denominator; 0 for a
/// single fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mean: MetricsReport,
    pub std: MetricsReport,
    pub folds: usize,
}

pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<AggregateReport, EvalError> {
    let first = reports.first().ok_or(EvalError::Empty)?;
    let k = first.f1.len();
    let n = reports.len() as f64;
    let stat = |get: &dyn Fn(&MetricsReport) -> f64| -> (f64, f64) {
        let m = reports.iter().map(get).sum::<f64>() / n;
        let var = if reports.len() > 1 {
            reports.iter().map(|r| (get(r) - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (m, var.sqrt())
    };
    let vec_stat = |get: &dyn Fn(&MetricsReport) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        (0..k).map(|c| stat(&|r: &MetricsReport| get(r)[c])).unzip()
    };
    let (accuracy, accuracy_sd) = stat(&|r| r.accuracy);
    let (macro_precision, macro_precision_sd) = stat(&|r| r.macro_precision);
    let (macro_recall, macro_recall_sd) = stat(&|r| r.macro_recall);
    let (macro_f1, macro_f1_sd) = stat(&|r| r.macro_f1);
    let (precision, precision_sd) = vec_stat(&|r| &r.precision);
    let (recall, recall_sd) = vec_stat(&|r| &r.recall);
    let (f1, f1_sd) = vec_stat(&|r| &r.f1);
    Ok(AggregateReport {
        mean: MetricsReport {
            accuracy,
            precision,
            recall,
            f1,
            macro_precision,
            macro_recall,
            macro_f1,
        },
        std: MetricsReport {
            accuracy: accuracy_sd,
            precision: precision_sd,
            recall: recall_sd,
            f1: f1_sd,
            macro_precision: macro_precision_sd,
            macro_recall: macro_recall_sd,
            macro_f1: macro_f1_sd,
        },
        folds: reports.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[1, 1, 0, 1], &[1, 0, 0, 1], 2).unwrap().counts, vec![vec![1, 1], vec![0, 2]]);
        let diag = confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap();
        assert_eq!(diag.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
        assert!(matches!(confusion(&[], &[], 2), Err(EvalError::Empty)));
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
    }

    #[test]
    fn hand_computed_f1() {
        let r = metrics_from_confusion(&ConfusionMatrix {
            counts: vec![vec![2, 0], vec![1, 1]],
        });
        assert!((r.f1[0] - 0.8).abs() < 1e-12);
        assert!((r.f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_f1 - 0.7333).abs() < 1e-4);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn majority_predictor_paradox() {
        // 674 majority, 326 minority, everything predicted majority.
        let labels: Vec<usize> = (0..1000).map(|i| usize::from(i >= 674)).collect();
        let r = evaluate(&[0; 1000], &labels, 2).unwrap();
        assert!((r.accuracy - 0.674).abs() < 1e-3);
        assert!((r.f1[0] - 2.0 * 0.674 / 1.674).abs() < 1e-12);
        assert!((r.f1[0] - 0.805).abs() < 1e-3);
        assert_eq!(r.f1[1], 0.0);
        assert!((r.macro_f1 - 0.4025).abs() < 1e-3);
    }

    #[test]
    fn perfect_predictions() {
        let r = evaluate(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert!(r.f1.iter().chain(&r.precision).chain(&r.recall).all(|&v| v == 1.0));
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn aggregation() {
        let a = evaluate(&[0, 1], &[0, 1], 2).unwrap();
        let agg = aggregate_folds(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(agg.mean, a);
        assert_eq!(agg.std.macro_f1, 0.0);
        let mut b = a.clone();
        b.macro_f1 = 0.6;
        let mut c = a.clone();
        c.macro_f1 = 0.7;
        let agg = aggregate_folds(&[b, c]).unwrap();
        assert!((agg.mean.macro_f1 - 0.65).abs() < 1e-15);
        assert!((agg.std.macro_f1 - (0.005f64).sqrt()).abs() < 1e-12);
        assert!(aggregate_folds(&[]).is_err());
    }

    fn permute(cm: &ConfusionMatrix, perm: &[usize]) -> ConfusionMatrix {
        let k = perm.len();
        let mut counts = vec![vec![0; k]; k];
        for t in 0..k {
            for p in 0..k {
                counts[perm[t]][perm[p]] = cm.counts[t][p];
            }
        }
        ConfusionMatrix { counts }
    }

    proptest! {
        #[test]
        fn class_permutation_symmetry(cells in prop::collection::vec(0u64..40, 9), shift in 1usize..3) {
            let cm = ConfusionMatrix { counts: cells.chunks(3).map(<[u64]>::to_vec).collect() };
            prop_assume!(cm.total() > 0);
            let perm: Vec<usize> = (0..3).map(|c| (c + shift) % 3).collect();
            let a = metrics_from_confusion(&cm);
            let b = metrics_from_confusion(&permute(&cm, &perm));
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
            for c in 0..3 {
                prop_assert_eq!(a.f1[c], b.f1[perm[c]]);
            }
        }

        #[test]
        fn f1_between_precision_and_recall(cells in prop::collection::vec(0u64..30, 4)) {
            let cm = ConfusionMatrix { counts: cells.chunks(2).map(<[u64]>::to_vec).collect() };
            prop_assume!(cm.total() > 0);
            let r = metrics_from_confusion(&cm);
            for c in 0..2 {
                let (p, rc, f) = (r.precision[c], r.recall[c], r.f1[c]);
                if p + rc == 0.0 {
                    prop_assert_eq!(f, 0.0);
                } else {
                    prop_assert!(p.min(rc) - 1e-12 <= f && f <= p.max(rc) + 1e-12);
                }
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
    }
}
