//! Readers for the published on-disk formats of UCI HAR, WISDM v1.1 and MHEALTH.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::signal::{denoise_window, synthesize_resistance};
use super::{io_err, DataError, DataResult, DatasetKind, DatasetSpec, LabeledWindow, Recording};
use crate::Tensor;

/// Raw-row count the WISDM v1.1 description advertises.
pub const WISDM_CLAIMED_ROWS: usize = 1_098_207;
/// Fraction of malformed WISDM rows tolerated before aborting.
pub const WISDM_MAX_MALFORMED: f64 = 0.05;
/// Row count the MHEALTH description advertises (all subjects, all labels).
pub const MHEALTH_CLAIMED_ROWS: usize = 1_144_000;

const MHEALTH_SUBJECTS: u32 = 10;
const MHEALTH_COLUMNS: usize = 24;
/// Chest acc, left-ankle acc + gyro, right-arm acc + gyro. ECG (3, 4) and
/// magnetometers (11–13, 20–22) are parsed but not selected.
pub const MHEALTH_DEFAULT_COLUMNS: [usize; 15] = [0, 1, 2, 5, 6, 7, 8, 9, 10, 14, 15, 16, 17, 18, 19];

const UCI_WINDOW: usize = 128;
const UCI_SIGNALS: [&str; 9] = [
    "body_acc_x",
    "body_acc_y",
    "body_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
];

fn read_text(path: &Path) -> DataResult<String> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn parse_floats(path: &Path, line_no: usize, line: &str) -> DataResult<Vec<f32>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f32>().map_err(|_| DataError::Format {
                path: path.to_path_buf(),
                line: line_no,
                detail: format!("not a number: `{tok}`"),
            })
        })
        .collect()
}

fn nonblank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn read_ints(path: &Path) -> DataResult<Vec<u32>> {
    let text = read_text(path)?;
    nonblank_lines(&text)
        .map(|(n, l)| {
            l.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .map(|v| v as u32)
                .ok_or_else(|| DataError::Format {
                    path: path.to_path_buf(),
                    line: n,
                    detail: format!("bad id `{l}`"),
                })
        })
        .collect()
}

/// UCI HAR windows with the dataset's own train/test partition.
#[derive(Debug, Clone)]
pub struct UciHar {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
}

impl UciHar {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn uci_root(root: &Path) -> PathBuf {
    let nested = root.join("UCI HAR Dataset");
    if !root.join("train").exists() && nested.join("train").exists() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn parse_uci_split(root: &Path, split: &str, uid_base: u64, spec: &DatasetSpec) -> DataResult<Vec<LabeledWindow>> {
    let dir = root.join(split);
    let labels_path = dir.join(format!("y_{split}.txt"));
    let labels = read_ints(&labels_path)?;
    let subjects = read_ints(&dir.join(format!("subject_{split}.txt")))?;
    if subjects.len() != labels.len() {
        return Err(DataError::CountMismatch {
            what: format!("subject_{split}.txt rows vs labels"),
            expected: labels.len(),
            found: subjects.len(),
        });
    }
    let n = labels.len();
    let mut data = vec![vec![0f32; UCI_SIGNALS.len() * UCI_WINDOW]; n];
    for (c, signal) in UCI_SIGNALS.iter().enumerate() {
        let path = dir.join("Inertial Signals").join(format!("{signal}_{split}.txt"));
        let text = read_text(&path)?;
        let mut rows = 0;
        for (line_no, line) in nonblank_lines(&text) {
            let values = parse_floats(&path, line_no, line)?;
            if values.len() != UCI_WINDOW {
                return Err(DataError::Format {
                    path,
                    line: line_no,
                    detail: format!("{} samples, expected {UCI_WINDOW}", values.len()),
                });
            }
            if rows < n {
                data[rows][c * UCI_WINDOW..(c + 1) * UCI_WINDOW].copy_from_slice(&values);
            }
            rows += 1;
        }
        if rows != n {
            return Err(DataError::CountMismatch {
                what: format!("{signal}_{split}.txt rows vs y_{split}.txt"),
                expected: n,
                found: rows,
            });
        }
    }
    data.into_iter()
        .zip(labels.iter().zip(&subjects))
        .enumerate()
        .map(|(i, (samples, (&label, &subject)))| {
            if !(1..=spec.num_classes() as u32).contains(&label) {
                return Err(DataError::Format {
                    path: labels_path.clone(),
                    line: i + 1,
                    detail: format!("activity id {label} outside 1..={}", spec.num_classes()),
                });
            }
            let activity = label as usize - 1;
            let raw = Tensor::new(vec![UCI_SIGNALS.len(), UCI_WINDOW], samples).expect("uci shape");
            let window = denoise_window(&raw);
            let resistance = synthesize_resistance(&window, activity, spec)?;
            Ok(LabeledWindow {
                window,
                activity,
                resistance,
                subject_id: subject,
                source: DatasetKind::UciHar,
                uid: uid_base + i as u64,
            })
        })
        .collect()
}

/// Reads the raw inertial signals (9 channels × 128 samples per window).
///
/// `root` is the extracted `UCI HAR Dataset` directory or its parent.
/// Windows come back median-filtered with their resistance targets attached.
pub fn parse_uci_har(root: &Path) -> DataResult<UciHar> {
    let root = uci_root(root);
    let spec = DatasetSpec::for_kind(DatasetKind::UciHar);
    Ok(UciHar {
        train: parse_uci_split(&root, "train", 0, &spec)?,
        test: parse_uci_split(&root, "test", 1 << 32, &spec)?,
    })
}

/// Rows of the engineered-feature table (`X_train.txt` / `X_test.txt`).
pub fn parse_uci_feature_table(path: &Path) -> DataResult<Vec<Vec<f32>>> {
    let text = read_text(path)?;
    nonblank_lines(&text).map(|(n, l)| parse_floats(path, n, l)).collect()
}

#[derive(Debug, Clone)]
pub struct WisdmData {
    pub recordings: Vec<Recording>,
    pub accepted: usize,
    pub skipped: usize,
}

impl WisdmData {
    pub fn raw_rows(&self) -> usize {
        self.accepted + self.skipped
    }
}

fn wisdm_row(row: &str, spec: &DatasetSpec) -> Option<(u32, usize, [f32; 3])> {
    let fields: Vec<&str> = row.split(',').map(str::trim).collect();
    if fields.len() != 6 || fields.iter().any(|f| f.is_empty()) {
        return None;
    }
    let user = fields[0].parse::<u32>().ok()?;
    let activity = spec.label_id(fields[1])?;
    fields[2].parse::<i64>().ok()?;
    let mut xyz = [0f32; 3];
    for (v, f) in xyz.iter_mut().zip(&fields[3..]) {
        *v = f.parse::<f32>().ok().filter(|v| v.is_finite())?;
    }
    Some((user, activity, xyz))
}

/// Reads the WISDM v1.1 raw file: `user,activity,timestamp,x,y,z;` rows.
///
/// Malformed rows are skipped and counted. Contiguous rows sharing user and
/// activity become one recording.
pub fn parse_wisdm(raw_file: &Path) -> DataResult<WisdmData> {
    let spec = DatasetSpec::for_kind(DatasetKind::Wisdm);
    let text = read_text(raw_file)?;
    let mut recordings: Vec<Recording> = Vec::new();
    let (mut accepted, mut skipped) = (0, 0);
    let mut current: Option<(u32, usize)> = None;
    for row in text.split([';', '\n', '\r']).map(str::trim).filter(|r| !r.is_empty()) {
        let Some((user, activity, xyz)) = wisdm_row(row, &spec) else {
            skipped += 1;
            continue;
        };
        accepted += 1;
        if current != Some((user, activity)) {
            current = Some((user, activity));
            recordings.push(Recording {
                subject_id: user,
                activity,
                channel_names: spec.layout.names.clone(),
                channels: vec![Vec::new(); 3],
                sample_rate_hz: spec.sample_rate_hz,
            });
        }
        let rec = recordings.last_mut().expect("open recording");
        for (ch, v) in rec.channels.iter_mut().zip(xyz) {
            ch.push(v);
        }
    }
    let total = accepted + skipped;
    if total == 0 {
        return Err(DataError::Empty("WISDM file has no rows"));
    }
    if skipped as f64 > WISDM_MAX_MALFORMED * total as f64 {
        return Err(DataError::TooManyMalformed { skipped, total });
    }
    Ok(WisdmData {
        recordings,
        accepted,
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct MhealthData {
    pub recordings: Vec<Recording>,
    pub subjects: Vec<u32>,
    /// Every data row, null class included.
    pub total_rows: usize,
    pub null_rows: usize,
    /// Canonical ids (label − 1) of the non-null classes seen.
    pub classes: BTreeSet<usize>,
}

impl MhealthData {
    /// Relative deviation of the parsed row count from the advertised total.
    pub fn row_claim_deviation(&self) -> f64 {
        (self.total_rows as f64 - MHEALTH_CLAIMED_ROWS as f64).abs() / MHEALTH_CLAIMED_ROWS as f64
    }
}

/// [`parse_mhealth_with`] using the default accelerometer/gyroscope columns.
pub fn parse_mhealth(dir: &Path) -> DataResult<MhealthData> {
    parse_mhealth_with(dir, &MHEALTH_DEFAULT_COLUMNS)
}

/// Reads `mHealth_subject{1..10}.log`. Label-0 rows are dropped; contiguous
/// same-label runs become recordings over the selected `columns`.
pub fn parse_mhealth_with(dir: &Path, columns: &[usize]) -> DataResult<MhealthData> {
    let spec = DatasetSpec::for_kind(DatasetKind::Mhealth);
    if let Some(&bad) = columns.iter().find(|&&c| c + 1 >= MHEALTH_COLUMNS) {
        return Err(DataError::InvalidArgument(format!(
            "column {bad} is not a sensor column"
        )));
    }
    let names: Vec<String> = if columns == MHEALTH_DEFAULT_COLUMNS {
        spec.layout.names.clone()
    } else {
        columns.iter().map(|c| format!("col{c}")).collect()
    };
    let mut out = MhealthData {
        recordings: Vec::new(),
        subjects: Vec::new(),
        total_rows: 0,
        null_rows: 0,
        classes: BTreeSet::new(),
    };
    for subject in 1..=MHEALTH_SUBJECTS {
        let path = dir.join(format!("mHealth_subject{subject}.log"));
        let text = read_text(&path)?;
        let mut width = None;
        let mut current: Option<usize> = None;
        for (line_no, line) in nonblank_lines(&text) {
            let values = parse_floats(&path, line_no, line)?;
            if *width.get_or_insert(values.len()) != values.len() {
                return Err(DataError::Format {
                    path,
                    line: line_no,
                    detail: format!("{} columns, earlier rows have {}", values.len(), width.unwrap_or(0)),
                });
            }
            if values.len() < MHEALTH_COLUMNS {
                return Err(DataError::Format {
                    path,
                    line: line_no,
                    detail: format!("{} columns, expected {MHEALTH_COLUMNS}", values.len()),
                });
            }
            out.total_rows += 1;
            let label = values[values.len() - 1];
            if label.fract() != 0.0 || !(0.0..=spec.num_classes() as f32).contains(&label) {
                return Err(DataError::Format {
                    path,
                    line: line_no,
                    detail: format!("bad label {label}"),
                });
            }
            if label == 0.0 {
                out.null_rows += 1;
                current = None;
                continue;
            }
            let activity = label as usize - 1;
            out.classes.insert(activity);
            if current != Some(activity) {
                current = Some(activity);
                out.recordings.push(Recording {
                    subject_id: subject,
                    activity,
                    channel_names: names.clone(),
                    channels: vec![Vec::new(); columns.len()],
                    sample_rate_hz: spec.sample_rate_hz,
                });
            }
            let rec = out.recordings.last_mut().expect("open recording");
            for (ch, &col) in rec.channels.iter_mut().zip(columns) {
                ch.push(values[col]);
            }
        }
        out.subjects.push(subject);
    }
    Ok(out)
}
