//! Single-threaded batch-1 timing on a monotonic clock.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{MetricsError, MetricsResult};
use crate::data::{apply_normalizer, denoise_window, NormalizerStats};
use crate::model::{self, flops_estimate, ModelConfig, Prediction};
use crate::nn::Mode;
use crate::{Params, Tensor};

pub const MIN_BENCH_RUNS: usize = 100;
pub const MIN_BENCH_WARMUP: usize = 10;
/// Windows pushed through the throughput loop, at least.
pub const MIN_STREAM_WINDOWS: usize = 1000;
pub const PC_NOT_MEASURED: &str = "not measured";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Median model-forward time per window.
    #[serde(rename = "RTR_ms")]
    pub rtr_ms: f64,
    /// Median denoise + normalize + forward time per window.
    #[serde(rename = "LT_ms")]
    pub lt_ms: f64,
    /// Windows per second over the streaming loop.
    #[serde(rename = "TP_fps")]
    pub tp_fps: f64,
    /// Mul-adds per window / 1e9.
    #[serde(rename = "CL_gflops")]
    pub cl_gflops: f64,
    /// `(RPA / 100) / CL`, when an RPA was supplied.
    #[serde(rename = "MER")]
    pub mer: Option<f64>,
    #[serde(rename = "PC_watts")]
    pub pc_watts: String,
    pub runs: usize,
    pub warmup: usize,
    pub stream_windows: usize,
}

/// Report plus the predictions made inside the timed forward loop.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    /// `predictions[i]` is the eval-mode prediction for the preprocessed
    /// `windows[i % windows.len()]`.
    pub predictions: Vec<Prediction<f32>>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Times batch-1 inference over raw (un-normalized) `[C, T]` windows,
/// cycling through them as needed.
pub fn bench(
    params: &Params,
    config: &ModelConfig,
    windows: &[Tensor],
    normalizer: &NormalizerStats,
    runs: usize,
    warmup: usize,
    rpa_percent: Option<f64>,
) -> MetricsResult<BenchRun> {
    if windows.is_empty() {
        return Err(MetricsError::Empty("bench needs at least one window"));
    }
    if runs < MIN_BENCH_RUNS || warmup < MIN_BENCH_WARMUP {
        return Err(MetricsError::InvalidArgument(format!(
            "runs {runs} / warmup {warmup} below the minimum {MIN_BENCH_RUNS} / {MIN_BENCH_WARMUP}"
        )));
    }
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let preprocess = |w: &Tensor| {
        apply_normalizer(&denoise_window(w), normalizer).map_err(|e| MetricsError::InvalidArgument(e.to_string()))
    };
    for i in 0..warmup {
        let z = preprocess(&windows[i % windows.len()])?;
        model::predict(&z, params, config, Mode::Eval, &mut rng)?;
    }
    // Both timings come from the same run, so LT ≥ RTR per sample and
    // therefore for the medians too.
    let mut predictions = Vec::with_capacity(runs);
    let mut forward_ms = Vec::with_capacity(runs);
    let mut e2e_ms = Vec::with_capacity(runs);
    for i in 0..runs {
        let w = &windows[i % windows.len()];
        let start = Instant::now();
        let z = preprocess(w)?;
        let mid = Instant::now();
        let p = model::predict(&z, params, config, Mode::Eval, &mut rng)?;
        let end = Instant::now();
        forward_ms.push((end - mid).as_secs_f64() * 1e3);
        e2e_ms.push((end - start).as_secs_f64() * 1e3);
        predictions.push(p);
    }
    let stream = MIN_STREAM_WINDOWS.max(windows.len());
    let start = Instant::now();
    for i in 0..stream {
        let z = preprocess(&windows[i % windows.len()])?;
        std::hint::black_box(model::predict(&z, params, config, Mode::Eval, &mut rng)?);
    }
    let tp_fps = stream as f64 / start.elapsed().as_secs_f64();
    let cl_gflops = flops_estimate(config)?.mul_adds as f64 / 1e9;
    Ok(BenchRun {
        report: BenchReport {
            rtr_ms: median(forward_ms),
            lt_ms: median(e2e_ms),
            tp_fps,
            cl_gflops,
            mer: rpa_percent.map(|rpa| (rpa / 100.0) / cl_gflops),
            pc_watts: PC_NOT_MEASURED.into(),
            runs,
            warmup,
            stream_windows: stream,
        },
        predictions,
    })
}
