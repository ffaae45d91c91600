use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Linear-interpolation quantile of `sorted` at `q ∈ [0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-trajectory prediction errors, their summary and training curves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub rmse: Vec<f64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    /// Estimated physical constants by name.
    pub physical: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn from_rmse(rmse: Vec<f64>) -> Self {
        let mut r = MetricsReport {
            rmse,
            ..Default::default()
        };
        r.summarize();
        r
    }

    /// Recomputes median and quartiles from `rmse`.
    pub fn summarize(&mut self) {
        let mut sorted = self.rmse.clone();
        sorted.sort_by(f64::total_cmp);
        self.median = quantile(&sorted, 0.5);
        self.q1 = quantile(&sorted, 0.25);
        self.q3 = quantile(&sorted, 0.75);
        self.iqr = self.q3 - self.q1;
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Training curves of `training` with evaluation results of `self`.
    pub fn with_training(mut self, training: &MetricsReport) -> Self {
        self.train_loss = training.train_loss.clone();
        self.val_loss = training.val_loss.clone();
        self.epochs_run = training.epochs_run;
        self.best_epoch = training.best_epoch;
        for (k, v) in &training.physical {
            self.physical.entry(k.clone()).or_insert(*v);
        }
        self
    }
}
