//! Plateau learning-rate decay and early stopping, both driven by a
//! higher-is-better validation metric.

use serde::{Deserialize, Serialize};

use super::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub best_metric: f64,
    pub epochs_since_improvement: usize,
    pub current_lr: f64,
}

impl SchedulerState {
    pub fn new(lr: f64) -> Self {
        Self {
            best_metric: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            current_lr: lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopState {
    pub best_metric: f64,
    pub epochs_since_improvement: usize,
    pub stop_flag: bool,
    /// Whether the latest step set a new best.
    pub improved: bool,
}

impl Default for StopState {
    fn default() -> Self {
        Self {
            best_metric: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            stop_flag: false,
            improved: false,
        }
    }
}

fn improves(metric: f64, best: f64, min_delta: f64) -> bool {
    best == f64::NEG_INFINITY || metric > best + min_delta
}

/// Once the non-improving streak exceeds `lr_patience`, the rate is scaled
/// by `lr_factor` and the streak restarts.
pub fn scheduler_step(state: &SchedulerState, metric: f64, cfg: &TrainConfig) -> SchedulerState {
    let mut s = state.clone();
    if improves(metric, s.best_metric, cfg.min_delta) {
        s.best_metric = metric;
        s.epochs_since_improvement = 0;
    } else {
        s.epochs_since_improvement += 1;
        if s.epochs_since_improvement > cfg.lr_patience {
            s.current_lr *= cfg.lr_factor;
            s.epochs_since_improvement = 0;
        }
    }
    s
}

/// Stops once the non-improving streak exceeds `stop_patience`.
pub fn early_stop_step(state: &StopState, metric: f64, cfg: &TrainConfig) -> StopState {
    let mut s = state.clone();
    s.improved = improves(metric, s.best_metric, cfg.min_delta);
    if s.improved {
        s.best_metric = metric;
        s.epochs_since_improvement = 0;
    } else {
        s.epochs_since_improvement += 1;
        if s.epochs_since_improvement > cfg.stop_patience {
            s.stop_flag = true;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_lr(metrics: &[f64]) -> Vec<f64> {
        let cfg = TrainConfig::default();
        let mut s = SchedulerState::new(1.0);
        metrics
            .iter()
            .map(|&m| {
                s = scheduler_step(&s, m, &cfg);
                s.current_lr
            })
            .collect()
    }

    #[test]
    fn improving_metrics_keep_lr() {
        let m: Vec<f64> = (0..20).map(|i| i as f64 * 0.01).collect();
        assert!(run_lr(&m).iter().all(|&lr| lr == 1.0));
    }

    #[test]
    fn six_epoch_plateau_halves_once() {
        let mut m = vec![0.5];
        m.extend([0.5; 6]);
        let lrs = run_lr(&m);
        assert_eq!(lrs[5], 1.0);
        assert_eq!(lrs[6], 0.5);
        let mut m = vec![0.5];
        m.extend([0.5; 5]);
        assert_eq!(*run_lr(&m).last().unwrap(), 1.0);
    }

    #[test]
    fn two_plateaus_quarter_lr() {
        let mut m = vec![0.5];
        m.extend([0.5; 6]);
        m.push(0.6);
        m.extend([0.6; 6]);
        let lrs = run_lr(&m);
        assert_eq!(*lrs.last().unwrap(), 0.25);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn min_delta_counts_as_plateau() {
        let m = [0.5, 0.50005, 0.50009, 0.50008, 0.50009, 0.50007, 0.50009];
        assert_eq!(*run_lr(&m).last().unwrap(), 0.5);
    }

    fn run_stop(metrics: &[f64]) -> Vec<bool> {
        let cfg = TrainConfig::default();
        let mut s = StopState::default();
        metrics
            .iter()
            .map(|&m| {
                s = early_stop_step(&s, m, &cfg);
                s.stop_flag
            })
            .collect()
    }

    #[test]
    fn eleven_epoch_plateau_stops() {
        let mut m = vec![0.7];
        m.extend([0.6; 11]);
        let flags = run_stop(&m);
        assert!(!flags[10]);
        assert!(flags[11]);
    }

    #[test]
    fn improvement_inside_plateau_resets() {
        let mut m = vec![0.7];
        m.extend([0.6; 8]);
        m.push(0.8);
        m.extend([0.6; 10]);
        assert!(run_stop(&m).iter().all(|&f| !f));
    }

    #[test]
    fn monotone_improvement_never_stops() {
        let m: Vec<f64> = (0..100).map(|i| i as f64 * 0.001).collect();
        assert!(run_stop(&m).iter().all(|&f| !f));
    }
}
