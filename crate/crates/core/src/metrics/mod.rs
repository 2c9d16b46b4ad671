//! Evaluation metrics, the batch-1 benchmark, and the ablation suite.

mod ablation;
mod bench;
mod classification;
mod regression;

use serde::{Deserialize, Serialize};

pub use ablation::{
    ablation_suite, matched_plain_backbone, AblationRow, AblationTable, ABLATION_LABELS, F1_SLACK_POINTS,
};
pub use bench::{bench, BenchReport, BenchRun, MIN_BENCH_RUNS, MIN_BENCH_WARMUP, MIN_STREAM_WINDOWS, PC_NOT_MEASURED};
pub use classification::{auc_roc, classification_metrics, ClassMetrics, ClassificationMetrics};
pub use regression::{regression_metrics, regression_metrics_with, RegressionMetrics, DEFAULT_TOLERANCE, FER_FLOOR};

use crate::data::{stack_batch, LabeledWindow};
use crate::model::{self, ModelConfig, ModelError};
use crate::Params;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions for {1} labels")]
    Length(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training failed: {0}")]
    Train(String),
}

pub type MetricsResult<T> = Result<T, MetricsError>;

/// Formulas behind the resistance numbers, stamped into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDefinitions {
    pub fer: String,
    pub rpa: String,
    pub resistance_scheme: String,
    pub resistance_targets: String,
    pub auc_roc: String,
}

/// Tolerance and FER floor used when scoring resistance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub tau: f64,
    pub fer_floor: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TOLERANCE,
            fer_floor: FER_FLOOR,
        }
    }
}

impl MetricDefinitions {
    pub fn current(tau: f64) -> Self {
        Self::with(&MetricsConfig {
            tau,
            ..MetricsConfig::default()
        })
    }

    pub fn with(m: &MetricsConfig) -> Self {
        let (tau, floor) = (m.tau, m.fer_floor);
        Self {
            fer: format!("100 * mean(|pred - true| / max(true, {floor}))"),
            rpa: format!("100 * fraction(|pred - true| <= {tau})"),
            resistance_scheme: crate::data::RESISTANCE_SCHEME_ID.into(),
            resistance_targets: "synthetic: clamp(base(activity) + 0.15 * (min(SMA / 30, 1) - 0.5), 0, 1)".into(),
            auc_roc: "macro one-vs-rest on activity probabilities, rank statistic with average ties".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub classification: Option<ClassificationMetrics>,
    pub auc_roc: Option<f64>,
    pub regression: Option<RegressionMetrics>,
    pub definitions: MetricDefinitions,
}

impl MetricsReport {
    pub fn macro_f1(&self) -> Option<f64> {
        self.classification.as_ref().map(|c| c.macro_f1)
    }

    pub fn rpa_percent(&self) -> Option<f64> {
        self.regression.as_ref().map(|r| r.rpa_percent)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const EVAL_BATCH: usize = 64;

/// Eval-mode predictions for every window, then every applicable metric.
/// Resistance predictions are clamped to `[0, 1]` first.
pub fn evaluate(
    params: &Params,
    config: &ModelConfig,
    windows: &[LabeledWindow],
    tau: f64,
) -> MetricsResult<MetricsReport> {
    evaluate_with(
        params,
        config,
        windows,
        &MetricsConfig {
            tau,
            ..MetricsConfig::default()
        },
    )
}

pub fn evaluate_with(
    params: &Params,
    config: &ModelConfig,
    windows: &[LabeledWindow],
    metrics: &MetricsConfig,
) -> MetricsResult<MetricsReport> {
    let tau = metrics.tau;
    if windows.is_empty() {
        return Err(MetricsError::Empty("no windows to evaluate"));
    }
    let mut probs = Vec::new();
    let mut preds = Vec::new();
    let mut resist = Vec::new();
    for chunk in windows.chunks(EVAL_BATCH) {
        let (x, _, _) = stack_batch(chunk).map_err(|e| MetricsError::InvalidArgument(e.to_string()))?;
        for p in model::predict_batch(&x, params, config)? {
            if let Some(cls) = p.activity() {
                preds.push(cls);
            }
            if let Some(r) = p.resistance_clamped() {
                resist.push(r as f64);
            }
            if let Some(row) = p.activity_probs {
                probs.push(row.into_iter().map(f64::from).collect::<Vec<_>>());
            }
        }
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.activity).collect();
    let targets: Vec<f64> = windows.iter().map(|w| w.resistance as f64).collect();
    let classification = if config.has_activity_head() {
        Some(classification_metrics(&preds, &labels, config.num_classes)?)
    } else {
        None
    };
    let auc = if config.has_activity_head() {
        auc_roc(&probs, &labels)?
    } else {
        None
    };
    let regression = if config.has_resistance_head() {
        Some(regression_metrics_with(&resist, &targets, tau, metrics.fer_floor)?)
    } else {
        None
    };
    Ok(MetricsReport {
        samples: windows.len(),
        classification,
        auc_roc: auc,
        regression,
        definitions: MetricDefinitions::with(metrics),
    })
}
