use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsResult};

/// Default RPA tolerance.
pub const DEFAULT_TOLERANCE: f64 = 0.10;
/// Denominator floor for the relative error in FER.
pub const FER_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub fer_percent: f64,
    pub rpa_percent: f64,
    pub tolerance: f64,
    pub fer_floor: f64,
}

pub fn regression_metrics(pred: &[f64], truth: &[f64], tau: f64) -> MetricsResult<RegressionMetrics> {
    regression_metrics_with(pred, truth, tau, FER_FLOOR)
}

/// As [`regression_metrics`] with an explicit FER denominator floor.
pub fn regression_metrics_with(
    pred: &[f64],
    truth: &[f64],
    tau: f64,
    fer_floor: f64,
) -> MetricsResult<RegressionMetrics> {
    if pred.len() != truth.len() {
        return Err(MetricsError::Length(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty("no resistance values"));
    }
    if !(tau > 0.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "tolerance {tau} must be positive"
        )));
    }
    if !(fer_floor > 0.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "FER floor {fer_floor} must be positive"
        )));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq, mut rel, mut hits) = (0.0, 0.0, 0.0, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let e = (p - t).abs();
        abs += e;
        sq += e * e;
        rel += e / t.max(fer_floor);
        hits += usize::from(e <= tau);
    }
    Ok(RegressionMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        fer_percent: 100.0 * rel / n,
        rpa_percent: 100.0 * hits as f64 / n,
        tolerance: tau,
        fer_floor,
    })
}
