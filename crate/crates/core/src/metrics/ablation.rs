//! Full model versus four single-component removals, equal seed and budget.

use serde::{Deserialize, Serialize};

use super::{
    bench, evaluate, MetricsError, MetricsReport, MetricsResult, DEFAULT_TOLERANCE, MIN_BENCH_RUNS, MIN_BENCH_WARMUP,
};
use crate::data::PreparedData;
use crate::model::{build_model, flops_estimate, Backbone, ModelConfig, Task};
use crate::training::{train, Checkpoint, TrainConfig};
use crate::{Params, Tensor};

pub const ABLATION_LABELS: [&str; 5] = [
    "MMTL-Net (Full Model)",
    "Without MobileNetV3",
    "Without MTL Module",
    "Without SE Module",
    "Without Swish Activation Function",
];

/// The full model may trail an ablation's macro F1 by at most this many
/// percentage points before the table flags it.
pub const F1_SLACK_POINTS: f64 = 2.0;

const PLAIN_LAYERS: usize = 3;
const PLAIN_KERNEL: usize = 5;
const MAX_PLAIN_WIDTH: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub configuration: String,
    pub report: MetricsReport,
    pub trainable_params: usize,
    pub mul_adds: u64,
    /// Median forward time, summed over the row's models.
    pub inference_ms: f64,
    /// Median preprocess + forward time, summed over the row's models.
    pub latency_ms: f64,
    pub seed: u64,
    pub epochs_budget: usize,
    /// Epochs actually run by each model of the row.
    pub epochs_run: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Ablations whose macro F1 beats the full model by more than the slack.
    pub violations: Vec<String>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    configuration: &'a str,
    f1: Option<f64>,
    precision: Option<f64>,
    recall: Option<f64>,
    auc_roc: Option<f64>,
    mae: Option<f64>,
    rmse: Option<f64>,
    fer_percent: Option<f64>,
    rpa_percent: Option<f64>,
    accuracy: Option<f64>,
    inference_ms: f64,
    latency_ms: f64,
    trainable_params: usize,
    mul_adds: u64,
    seed: u64,
    epochs_budget: usize,
    epochs_run: String,
    flagged: bool,
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// One header row, one row per configuration; rates in percent.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            let c = row.report.classification.as_ref();
            let r = row.report.regression.as_ref();
            let pct = |f: fn(&super::ClassificationMetrics) -> f64| c.map(|c| 100.0 * f(c));
            w.serialize(CsvRow {
                configuration: &row.configuration,
                f1: pct(|c| c.macro_f1),
                precision: pct(|c| c.macro_precision),
                recall: pct(|c| c.macro_recall),
                auc_roc: row.report.auc_roc,
                mae: r.map(|r| r.mae),
                rmse: r.map(|r| r.rmse),
                fer_percent: r.map(|r| r.fer_percent),
                rpa_percent: r.map(|r| r.rpa_percent),
                accuracy: pct(|c| c.accuracy),
                inference_ms: row.inference_ms,
                latency_ms: row.latency_ms,
                trainable_params: row.trainable_params,
                mul_adds: row.mul_adds,
                seed: row.seed,
                epochs_budget: row.epochs_budget,
                epochs_run: row
                    .epochs_run
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("+"),
                flagged: self.violations.iter().any(|v| v.starts_with(&row.configuration)),
            })
            .expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf-8 csv")
    }
}

/// Three stride-2 standard convolutions whose width is chosen so the
/// trainable parameter count is as close as possible to `base`.
pub fn matched_plain_backbone(base: &ModelConfig) -> MetricsResult<ModelConfig> {
    let target = flops_estimate(base)?.params as i64;
    let mut best: Option<(i64, ModelConfig)> = None;
    for width in 1..=MAX_PLAIN_WIDTH {
        let cfg = ModelConfig {
            backbone: Backbone::PlainConv {
                channels: vec![width; PLAIN_LAYERS],
                kernel_size: PLAIN_KERNEL,
            },
            ..base.clone()
        };
        let gap = (flops_estimate(&cfg)?.params as i64 - target).abs();
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, cfg));
        }
    }
    Ok(best.expect("at least one width").1)
}

struct Trained {
    checkpoint: Checkpoint,
    config: ModelConfig,
}

fn fit(config: &ModelConfig, data: &PreparedData, cfg: &TrainConfig) -> MetricsResult<Trained> {
    let (checkpoint, _) = train(config, cfg, &data.train, &data.val).map_err(|e| MetricsError::Train(e.to_string()))?;
    let config = checkpoint.model.clone();
    Ok(Trained { checkpoint, config })
}

fn timing(params: &Params, config: &ModelConfig, windows: &[Tensor], data: &PreparedData) -> MetricsResult<(f64, f64)> {
    // Windows are already normalized; only the timing is used here.
    let run = bench(
        params,
        config,
        windows,
        &data.normalizer,
        MIN_BENCH_RUNS,
        MIN_BENCH_WARMUP,
        None,
    )?;
    Ok((run.report.rtr_ms, run.report.lt_ms))
}

/// Trains and evaluates the five configurations on `data` (test split),
/// each with `cfg.seed` and `cfg.epochs`.
pub fn ablation_suite(base: &ModelConfig, data: &PreparedData, cfg: &TrainConfig) -> MetricsResult<AblationTable> {
    let windows: Vec<Tensor> = data.test.iter().take(32).map(|w| w.window.clone()).collect();
    let full = ModelConfig {
        enable_se: true,
        enable_swish: true,
        enable_mtl: true,
        backbone: Backbone::Mobilenet,
        ..base.clone()
    };
    let variants = [
        vec![full.clone()],
        vec![matched_plain_backbone(&full)?],
        vec![
            ModelConfig {
                enable_mtl: false,
                single_task: Task::Activity,
                ..full.clone()
            },
            ModelConfig {
                enable_mtl: false,
                single_task: Task::Resistance,
                ..full.clone()
            },
        ],
        vec![ModelConfig {
            enable_se: false,
            ..full.clone()
        }],
        vec![ModelConfig {
            enable_swish: false,
            ..full.clone()
        }],
    ];
    let mut rows = Vec::new();
    for (label, configs) in ABLATION_LABELS.iter().zip(variants) {
        let mut reports = Vec::new();
        let (mut params, mut mul_adds, mut inf, mut lat, mut epochs) = (0, 0, 0.0, 0.0, Vec::new());
        for config in &configs {
            let t = fit(config, data, cfg)?;
            reports.push(evaluate(
                &t.checkpoint.params,
                &t.config,
                &data.test,
                DEFAULT_TOLERANCE,
            )?);
            let est = flops_estimate(&t.config)?;
            params += build_model::<f32>(&t.config, 0)?.trainable_count();
            mul_adds += est.mul_adds;
            let (i, l) = timing(&t.checkpoint.params, &t.config, &windows, data)?;
            inf += i;
            lat += l;
            epochs.push(t.checkpoint.history.records.len());
        }
        let mut report = reports[0].clone();
        for other in &reports[1..] {
            report.classification = report.classification.or_else(|| other.classification.clone());
            report.auc_roc = report.auc_roc.or(other.auc_roc);
            report.regression = report.regression.or_else(|| other.regression.clone());
        }
        rows.push(AblationRow {
            configuration: label.to_string(),
            report,
            trainable_params: params,
            mul_adds,
            inference_ms: inf,
            latency_ms: lat,
            seed: cfg.seed,
            epochs_budget: cfg.epochs,
            epochs_run: epochs,
        });
    }
    let full_f1 = rows[0].report.macro_f1().unwrap_or(0.0) * 100.0;
    let violations = rows[1..]
        .iter()
        .filter_map(|r| {
            let f1 = r.report.macro_f1()? * 100.0;
            (full_f1 < f1 - F1_SLACK_POINTS).then(|| {
                format!(
                    "{}: macro F1 {f1:.2} exceeds the full model's {full_f1:.2} by more than {F1_SLACK_POINTS} points",
                    r.configuration
                )
            })
        })
        .collect();
    Ok(AblationTable { rows, violations })
}
