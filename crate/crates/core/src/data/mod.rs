//! Dataset parsing, windowing, resistance-target synthesis and the
//! train-time transforms (augmentation, rebalancing, splitting).
//!
//! Windows are `[channels, time]` f32 tensors. Everything here is a pure
//! function of its inputs and an explicit seed.

mod augment;
mod cache;
mod labels;
mod parse;
mod pipeline;
mod signal;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Tensor;

pub use augment::{augment, rebalance, rotation_matrix, split, AugmentOp, Rebalance, SplitMode};
pub use cache::{read_windows, write_windows, CACHE_MAGIC, CACHE_VERSION};
pub use labels::{ActivityLabel, DatasetSpec, UCI_GRAVITY};
pub use parse::{
    parse_mhealth, parse_mhealth_with, parse_uci_feature_table, parse_uci_har, parse_wisdm, MhealthData, UciHar,
    WisdmData, MHEALTH_CLAIMED_ROWS, MHEALTH_DEFAULT_COLUMNS, WISDM_CLAIMED_ROWS, WISDM_MAX_MALFORMED,
};
pub use pipeline::{prepare, DataConfig, DataSource, PreparedData};
pub use signal::{
    apply_normalizer, denoise, denoise_window, fit_normalizer, invert_normalizer, segment, segment_bounds,
    segment_stride, signal_magnitude_area, synthesize_resistance, NormalizerStats, RESISTANCE_GAIN,
    RESISTANCE_SCHEME_ID, SMA_REFERENCE,
};
pub use synthetic::{synthetic_windows, SyntheticConfig, SYNTHETIC_FREQUENCIES_HZ};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: {detail}")]
    Format { path: PathBuf, line: usize, detail: String },
    #[error("{what}: expected {expected}, found {found}")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("{skipped} of {total} rows malformed (limit {limit:.0}%)", limit = WISDM_MAX_MALFORMED * 100.0)]
    TooManyMalformed { skipped: usize, total: usize },
    #[error("activity {activity} has no entry in the {dataset} label table")]
    UnmappedActivity { dataset: DatasetKind, activity: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("window cache: {0}")]
    Cache(String),
    #[error("normalizer leakage: {0} evaluation windows were part of the fit set")]
    Leakage(usize),
}

pub type DataResult<T> = Result<T, DataError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    UciHar,
    Wisdm,
    Mhealth,
    Synthetic,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [Self::UciHar, Self::Wisdm, Self::Mhealth, Self::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            Self::UciHar => "uci-har",
            Self::Wisdm => "wisdm",
            Self::Mhealth => "mhealth",
            Self::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DataError::InvalidArgument(format!("unknown dataset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Accel,
    Gyro,
}

/// Three consecutive channels holding the x/y/z axes of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub kind: SensorKind,
    pub first: usize,
}

/// Channel names plus the sensor triples that rotation acts on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub names: Vec<String>,
    pub triples: Vec<Triple>,
    /// First channel of the accelerometer triple used for intensity (SMA).
    pub intensity_triple: usize,
    /// Multiplier taking that triple to m/s².
    pub intensity_scale: f32,
}

impl ChannelLayout {
    pub fn channels(&self) -> usize {
        self.names.len()
    }

    /// Layout built from consecutive triples, named `{prefix}_{x,y,z}`.
    pub fn from_triples(groups: &[(&str, SensorKind)], intensity_triple: usize, intensity_scale: f32) -> Self {
        let mut names = Vec::new();
        let mut triples = Vec::new();
        for (prefix, kind) in groups {
            triples.push(Triple {
                kind: *kind,
                first: names.len(),
            });
            names.extend(["x", "y", "z"].iter().map(|a| format!("{prefix}_{a}")));
        }
        Self {
            names,
            triples,
            intensity_triple,
            intensity_scale,
        }
    }
}

/// Continuous multi-channel stream with one activity label.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: u32,
    /// Canonical activity id (index into the dataset's label table).
    pub activity: usize,
    pub channel_names: Vec<String>,
    pub channels: Vec<Vec<f32>>,
    pub sample_rate_hz: f32,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self) -> DataResult<()> {
        let n = self.len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(DataError::InvalidArgument("recording channels differ in length".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(DataError::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// One training/evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    /// `[channels, time]`.
    pub window: Tensor,
    pub activity: usize,
    /// Target in `[0, 1]`.
    pub resistance: f32,
    pub subject_id: u32,
    pub source: DatasetKind,
    /// Stable identity of the source window; duplicates made by
    /// oversampling or augmentation keep it.
    pub uid: u64,
}

/// Per-class counts, indexed by activity id.
pub fn class_counts(windows: &[LabeledWindow], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for w in windows {
        if w.activity >= counts.len() {
            counts.resize(w.activity + 1, 0);
        }
        counts[w.activity] += 1;
    }
    counts
}

/// Stacks windows into a `[B, C, T]` batch plus labels and targets.
pub fn stack_batch<'a>(
    windows: impl IntoIterator<Item = &'a LabeledWindow>,
) -> DataResult<(Tensor, Vec<usize>, Vec<f32>)> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut targets = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for w in windows {
        let s = (w.window.shape()[0], w.window.shape()[1]);
        if *shape.get_or_insert(s) != s {
            return Err(DataError::InvalidArgument("windows in a batch differ in shape".into()));
        }
        data.extend_from_slice(w.window.data());
        labels.push(w.activity);
        targets.push(w.resistance);
    }
    let (c, t) = shape.ok_or(DataError::Empty("batch has no windows"))?;
    Ok((
        Tensor::new(vec![labels.len(), c, t], data).expect("batch shape"),
        labels,
        targets,
    ))
}
