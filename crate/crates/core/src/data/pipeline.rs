//! Source → denoise → segment → targets → split → rebalance → augment →
//! normalize, driven by one config and one seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, rebalance, split, AugmentOp, Rebalance, SplitMode};
use super::parse::{parse_mhealth, parse_uci_har, parse_wisdm};
use super::signal::{apply_normalizer, denoise, fit_normalizer, segment, synthesize_resistance, NormalizerStats};
use super::synthetic::{synthetic_windows, SyntheticConfig};
use super::{class_counts, DataError, DataResult, DatasetKind, DatasetSpec, LabeledWindow, Recording};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(alias = "name")]
    pub dataset: DatasetKind,
    /// UCI HAR root, WISDM raw file or MHEALTH directory.
    #[serde(alias = "root")]
    pub path: Option<PathBuf>,
    /// Overrides the dataset's window length (streamed datasets only).
    #[serde(alias = "window")]
    pub window_len: Option<usize>,
    pub overlap: Option<f32>,
    pub train_fraction: f64,
    pub split_mode: SplitMode,
    pub rebalance: Rebalance,
    pub augment: Vec<AugmentOp>,
    /// Chance that a training window is replaced by an augmented copy.
    pub augment_probability: f64,
    pub synthetic: SyntheticConfig,
    /// Seed for generation, splits, balancing and augmentation; the run
    /// seed when unset.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            path: None,
            window_len: None,
            overlap: None,
            train_fraction: 0.8,
            split_mode: SplitMode::Random,
            rebalance: Rebalance::Oversample,
            augment: vec![AugmentOp::Crop, AugmentOp::Rotate, AugmentOp::Flip],
            augment_probability: 0.5,
            synthetic: SyntheticConfig::default(),
            seed: None,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> DataResult<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::InvalidArgument(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(DataError::InvalidArgument("augment_probability outside [0, 1]".into()));
        }
        if self.overlap.is_some_and(|o| !(0.0..1.0).contains(&o)) {
            return Err(DataError::InvalidArgument("overlap outside [0, 1)".into()));
        }
        if self.window_len == Some(0) {
            return Err(DataError::InvalidArgument("window_len must be positive".into()));
        }
        if self.dataset != DatasetKind::Synthetic && self.path.is_none() {
            return Err(DataError::InvalidArgument(format!(
                "dataset {} needs a path",
                self.dataset
            )));
        }
        Ok(())
    }

    fn source_path(&self) -> DataResult<&PathBuf> {
        self.path
            .as_ref()
            .ok_or_else(|| DataError::InvalidArgument(format!("dataset {} needs a path", self.dataset)))
    }
}

/// Where windows come from before any train-time transform.
#[derive(Debug, Clone)]
pub struct DataSource {
    pub spec: DatasetSpec,
    pub windows: Vec<LabeledWindow>,
    /// Dataset-provided test partition, if any.
    pub test: Option<Vec<LabeledWindow>>,
    /// Parser counters (accepted/skipped rows, subjects, ...).
    pub stats: BTreeMap<String, u64>,
}

fn windows_from_recordings(
    recordings: &[Recording],
    spec: &DatasetSpec,
    window_len: usize,
    overlap: f32,
) -> DataResult<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    for rec in recordings {
        for window in segment(&denoise(rec), window_len, overlap)? {
            let resistance = synthesize_resistance(&window, rec.activity, spec)?;
            let uid = out.len() as u64;
            out.push(LabeledWindow {
                window,
                activity: rec.activity,
                resistance,
                subject_id: rec.subject_id,
                source: spec.kind,
                uid,
            });
        }
    }
    Ok(out)
}

impl DataSource {
    pub fn load(config: &DataConfig, seed: u64) -> DataResult<Self> {
        config.validate()?;
        let seed = config.seed.unwrap_or(seed);
        let mut spec = DatasetSpec::for_kind(config.dataset);
        if spec.window_len.is_some() {
            spec.window_len = config.window_len.or(spec.window_len);
            spec.overlap = config.overlap.unwrap_or(spec.overlap);
        }
        let mut stats = BTreeMap::new();
        let (windows, test) = match config.dataset {
            DatasetKind::UciHar => {
                let uci = parse_uci_har(config.source_path()?)?;
                stats.insert("train_windows".into(), uci.train.len() as u64);
                stats.insert("test_windows".into(), uci.test.len() as u64);
                (uci.train, Some(uci.test))
            }
            DatasetKind::Wisdm => {
                let w = parse_wisdm(config.source_path()?)?;
                stats.insert("accepted_rows".into(), w.accepted as u64);
                stats.insert("skipped_rows".into(), w.skipped as u64);
                stats.insert("recordings".into(), w.recordings.len() as u64);
                let len = spec.window_len.expect("streamed dataset");
                (windows_from_recordings(&w.recordings, &spec, len, spec.overlap)?, None)
            }
            DatasetKind::Mhealth => {
                let m = parse_mhealth(config.source_path()?)?;
                stats.insert("subjects".into(), m.subjects.len() as u64);
                stats.insert("classes".into(), m.classes.len() as u64);
                stats.insert("total_rows".into(), m.total_rows as u64);
                stats.insert("null_rows".into(), m.null_rows as u64);
                stats.insert("recordings".into(), m.recordings.len() as u64);
                let len = spec.window_len.expect("streamed dataset");
                (windows_from_recordings(&m.recordings, &spec, len, spec.overlap)?, None)
            }
            DatasetKind::Synthetic => (synthetic_windows(&config.synthetic, seed)?, None),
        };
        if windows.is_empty() {
            return Err(DataError::Empty("dataset produced no windows"));
        }
        stats.insert(
            "windows".into(),
            (windows.len() + test.as_ref().map_or(0, Vec::len)) as u64,
        );
        Ok(Self {
            spec,
            windows,
            test,
            stats,
        })
    }
}

/// Normalized splits ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub spec: DatasetSpec,
    pub train: Vec<LabeledWindow>,
    pub val: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub normalizer: NormalizerStats,
    pub stats: BTreeMap<String, u64>,
}

impl PreparedData {
    pub fn channels(&self) -> usize {
        self.spec.layout.channels()
    }

    pub fn window_len(&self) -> usize {
        self.train.first().map_or(0, |w| w.window.shape()[1])
    }

    pub fn class_counts(&self) -> [Vec<usize>; 3] {
        let k = self.spec.num_classes();
        [
            class_counts(&self.train, k),
            class_counts(&self.val, k),
            class_counts(&self.test, k),
        ]
    }
}

const TEST_SPLIT_SALT: u64 = 0x7e57;
const VAL_SPLIT_SALT: u64 = 0x0a11;
const BALANCE_SALT: u64 = 0xba1a;
const AUGMENT_SALT: u64 = 0xa46e;

/// Runs the full pipeline. Datasets without their own test partition get
/// one carved out first (same fraction and mode as the train/val split).
pub fn prepare(config: &DataConfig, seed: u64) -> DataResult<PreparedData> {
    let seed = config.seed.unwrap_or(seed);
    let source = DataSource::load(config, seed)?;
    prepare_from(source, config, seed)
}

pub(crate) fn prepare_from(source: DataSource, config: &DataConfig, seed: u64) -> DataResult<PreparedData> {
    let DataSource {
        spec,
        windows,
        test,
        stats,
    } = source;
    let (pool, test) = match test {
        Some(test) => (windows, test),
        None => split(
            &windows,
            config.train_fraction,
            seed ^ TEST_SPLIT_SALT,
            config.split_mode,
        )?,
    };
    let (train, val) = split(&pool, config.train_fraction, seed ^ VAL_SPLIT_SALT, config.split_mode)?;
    if train.is_empty() {
        return Err(DataError::Empty("training split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BALANCE_SALT);
    let mut train = rebalance(&train, config.rebalance, &mut rng)?;
    if !config.augment.is_empty() && config.augment_probability > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ AUGMENT_SALT);
        for w in &mut train {
            if rng.gen_bool(config.augment_probability) {
                w.window = augment(&w.window, &spec.layout, &mut rng, &config.augment)?;
            }
        }
    }
    let normalizer = fit_normalizer(train.iter().map(|w| &w.window))?;
    let fit_set: BTreeSet<u64> = train.iter().map(|w| w.uid).collect();
    let leaked = val.iter().chain(&test).filter(|w| fit_set.contains(&w.uid)).count();
    if leaked > 0 {
        return Err(DataError::Leakage(leaked));
    }
    let normalize = |ws: Vec<LabeledWindow>| -> DataResult<Vec<LabeledWindow>> {
        ws.into_iter()
            .map(|mut w| {
                w.window = apply_normalizer(&w.window, &normalizer)?;
                Ok(w)
            })
            .collect()
    };
    Ok(PreparedData {
        train: normalize(train)?,
        val: normalize(val)?,
        test: normalize(test)?,
        spec,
        normalizer,
        stats,
    })
}
