//! The run configuration: one strict JSON document, every field defaulted.

use std::path::Path;

use mmtl_core::data::{DataConfig, DatasetSpec, NormalizerStats, PreparedData};
use mmtl_core::metrics::{MetricsConfig, MIN_BENCH_RUNS, MIN_BENCH_WARMUP};
use mmtl_core::model::ModelConfig;
use mmtl_core::training::{Checkpoint, TrainConfig};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub runs: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { runs: 1000, warmup: 50 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DataConfig,
    /// `input_channels`, `input_length` and `num_classes` are always taken
    /// from the dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.bench_check(self.bench.runs, self.bench.warmup)?;
        if !(self.metrics.tau > 0.0 && self.metrics.fer_floor > 0.0) {
            return Err(CliError::Usage(
                "metrics.tau and metrics.fer_floor must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn bench_check(&self, runs: usize, warmup: usize) -> CliResult<()> {
        if runs < MIN_BENCH_RUNS || warmup < MIN_BENCH_WARMUP {
            return Err(CliError::Usage(format!(
                "bench needs at least {MIN_BENCH_RUNS} runs and {MIN_BENCH_WARMUP} warmup iterations, got {runs} / {warmup}"
            )));
        }
        Ok(())
    }

    /// Seed for the data pipeline: the dataset's own, else the run seed.
    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.train.seed)
    }

    /// Model config with the dataset-determined dimensions filled in.
    pub fn model_for(&self, data: &PreparedData) -> CliResult<ModelConfig> {
        let cfg = ModelConfig {
            input_channels: data.channels(),
            input_length: data.window_len(),
            num_classes: data.spec.num_classes(),
            ..self.model.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The configuration a checkpoint was trained under.
    pub fn from_checkpoint(ck: &Checkpoint) -> CliResult<Self> {
        Ok(Self {
            dataset: extra(ck, EXTRA_DATA)?.unwrap_or_default(),
            model: ck.model.clone(),
            train: ck.train.clone(),
            metrics: extra(ck, EXTRA_METRICS)?.unwrap_or_default(),
            bench: extra(ck, EXTRA_BENCH)?.unwrap_or_default(),
        })
    }
}

pub const EXTRA_DATA: &str = "data";
pub const EXTRA_SPEC: &str = "dataset_spec";
pub const EXTRA_NORMALIZER: &str = "normalizer";
pub const EXTRA_METRICS: &str = "metrics";
pub const EXTRA_BENCH: &str = "bench";
pub const EXTRA_SCHEME: &str = "resistance_scheme";

pub fn extra<T: DeserializeOwned>(ck: &Checkpoint, key: &str) -> CliResult<Option<T>> {
    ck.extra_as(key).transpose().map_err(CliError::from)
}

pub fn normalizer(ck: &Checkpoint) -> CliResult<NormalizerStats> {
    extra(ck, EXTRA_NORMALIZER)?.ok_or_else(|| CliError::Data("checkpoint carries no normalizer statistics".into()))
}

pub fn spec(ck: &Checkpoint) -> CliResult<Option<DatasetSpec>> {
    extra(ck, EXTRA_SPEC)
}

/// Records everything eval, bench and infer need next to the weights.
pub fn stamp(ck: &mut Checkpoint, run: &RunConfig, data: &PreparedData) {
    let data_cfg = DataConfig {
        seed: Some(run.data_seed()),
        ..run.dataset.clone()
    };
    let mut put = |k: &str, v: serde_json::Value| {
        ck.extra.insert(k.to_string(), v);
    };
    put(
        EXTRA_DATA,
        serde_json::to_value(data_cfg).expect("data config serializes"),
    );
    put(EXTRA_SPEC, serde_json::to_value(&data.spec).expect("spec serializes"));
    put(
        EXTRA_NORMALIZER,
        serde_json::to_value(&data.normalizer).expect("normalizer serializes"),
    );
    put(
        EXTRA_METRICS,
        serde_json::to_value(run.metrics).expect("metrics config serializes"),
    );
    put(
        EXTRA_BENCH,
        serde_json::to_value(&run.bench).expect("bench config serializes"),
    );
    put(EXTRA_SCHEME, mmtl_core::data::RESISTANCE_SCHEME_ID.into());
}
