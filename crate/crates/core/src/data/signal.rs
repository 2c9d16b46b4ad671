//! Denoising, z-score normalization, segmentation and resistance targets.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ChannelLayout, DataError, DataResult, DatasetSpec, Recording};
use crate::Tensor;

/// Scales intensity deviation into the resistance target.
pub const RESISTANCE_GAIN: f32 = 0.15;
/// Identifies the target-synthesis formula in reports and checkpoints.
pub const RESISTANCE_SCHEME_ID: &str = "sma-intensity-v1";
/// SMA (m/s², summed over three axes) treated as full intensity.
pub const SMA_REFERENCE: f32 = 30.0;

fn median3(a: f32, b: f32, c: f32) -> f32 {
    a.min(b).max(a.max(b).min(c))
}

fn median_filter(x: &[f32], out: &mut [f32]) {
    let n = x.len();
    for i in 0..n {
        let prev = x[i.saturating_sub(1)];
        let next = x[(i + 1).min(n - 1)];
        out[i] = median3(prev, x[i], next);
    }
}

/// Width-3 median filter per channel, edges replicated.
pub fn denoise(recording: &Recording) -> Recording {
    let mut out = recording.clone();
    for (src, dst) in recording.channels.iter().zip(&mut out.channels) {
        median_filter(src, dst);
    }
    out
}

/// [`denoise`] on a `[channels, time]` window.
pub fn denoise_window(window: &Tensor) -> Tensor {
    let t = window.shape()[1];
    let mut out = window.clone();
    if t == 0 {
        return out;
    }
    for (src, dst) in window.data().chunks(t).zip(out.data_mut().chunks_mut(t)) {
        median_filter(src, dst);
    }
    out
}

/// Per-channel z-score statistics, kept in f64 so large offsets do not
/// bias the normalized mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero; their std is forced to 1.
    pub degenerate: Vec<bool>,
    pub fitted_on: usize,
}

impl NormalizerStats {
    pub fn has_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    /// Identity statistics for `channels` channels.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            degenerate: vec![false; channels],
            fitted_on: 0,
        }
    }
}

/// Fits mean and population std per channel over every sample of every window.
pub fn fit_normalizer<'a>(windows: impl IntoIterator<Item = &'a Tensor>) -> DataResult<NormalizerStats> {
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    let mut n = 0usize;
    let windows: Vec<&Tensor> = windows.into_iter().collect();
    for w in &windows {
        let (c, t) = (w.shape()[0], w.shape()[1]);
        if n == 0 {
            sums = vec![0.0; c];
        } else if c != sums.len() {
            return Err(DataError::InvalidArgument("windows differ in channel count".into()));
        }
        for (s, row) in sums.iter_mut().zip(w.data().chunks(t.max(1))) {
            *s += row.iter().map(|&v| v as f64).sum::<f64>();
        }
        count += t;
        n += 1;
    }
    if n == 0 {
        return Err(DataError::Empty("normalizer needs at least one training window"));
    }
    if count == 0 {
        return Err(DataError::Empty("training windows have no samples"));
    }
    let mean: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; mean.len()];
    for w in &windows {
        let t = w.shape()[1];
        for ((acc, m), row) in sq.iter_mut().zip(&mean).zip(w.data().chunks(t)) {
            *acc += row.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
        }
    }
    let mut std = Vec::with_capacity(mean.len());
    let mut degenerate = Vec::with_capacity(mean.len());
    for acc in sq {
        let s = (acc / count as f64).sqrt();
        let flat = !(s > 1e-12);
        degenerate.push(flat);
        std.push(if flat { 1.0 } else { s });
    }
    Ok(NormalizerStats {
        mean,
        std,
        degenerate,
        fitted_on: n,
    })
}

pub fn apply_normalizer(window: &Tensor, stats: &NormalizerStats) -> DataResult<Tensor> {
    let (c, t) = (window.shape()[0], window.shape()[1]);
    if c != stats.mean.len() {
        return Err(DataError::InvalidArgument(format!(
            "window has {c} channels, normalizer {}",
            stats.mean.len()
        )));
    }
    let mut out = window.clone();
    if t == 0 {
        return Ok(out);
    }
    for ((row, &m), &s) in out.data_mut().chunks_mut(t).zip(&stats.mean).zip(&stats.std) {
        for v in row {
            *v = ((*v as f64 - m) / s) as f32;
        }
    }
    Ok(out)
}

/// Undoes [`apply_normalizer`] (exact up to float rounding).
pub fn invert_normalizer(window: &Tensor, stats: &NormalizerStats) -> DataResult<Tensor> {
    let (c, t) = (window.shape()[0], window.shape()[1]);
    if c != stats.mean.len() {
        return Err(DataError::InvalidArgument(format!(
            "window has {c} channels, normalizer {}",
            stats.mean.len()
        )));
    }
    let mut out = window.clone();
    for ((row, &m), &s) in out.data_mut().chunks_mut(t.max(1)).zip(&stats.mean).zip(&stats.std) {
        for v in row {
            *v = (*v as f64 * s + m) as f32;
        }
    }
    Ok(out)
}

/// Hop between consecutive windows.
pub fn segment_stride(window_len: usize, overlap: f32) -> usize {
    ((window_len as f64 * (1.0 - overlap as f64)).round() as usize).max(1)
}

/// Window start/end indices for a stream of `len` samples.
pub fn segment_bounds(len: usize, window_len: usize, overlap: f32) -> DataResult<Vec<Range<usize>>> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(DataError::InvalidArgument(format!("overlap {overlap} outside [0, 1)")));
    }
    if window_len == 0 {
        return Err(DataError::InvalidArgument("window length must be positive".into()));
    }
    let stride = segment_stride(window_len, overlap);
    if len < window_len {
        return Ok(Vec::new());
    }
    let count = (len - window_len) / stride + 1;
    Ok((0..count).map(|i| i * stride..i * stride + window_len).collect())
}

/// Sliding windows over a recording, each `[channels, window_len]`.
pub fn segment(recording: &Recording, window_len: usize, overlap: f32) -> DataResult<Vec<Tensor>> {
    recording.check()?;
    let c = recording.channels.len();
    Ok(segment_bounds(recording.len(), window_len, overlap)?
        .into_iter()
        .map(|r| {
            let mut data = Vec::with_capacity(c * window_len);
            for ch in &recording.channels {
                data.extend_from_slice(&ch[r.clone()]);
            }
            Tensor::new(vec![c, window_len], data).expect("segment shape")
        })
        .collect())
}

/// Mean over time of |x| + |y| + |z| of the layout's intensity triple, m/s².
pub fn signal_magnitude_area(window: &Tensor, layout: &ChannelLayout) -> DataResult<f32> {
    let (c, t) = (window.shape()[0], window.shape()[1]);
    let first = layout.intensity_triple;
    if first + 3 > c {
        return Err(DataError::InvalidArgument(format!(
            "intensity triple at channel {first} exceeds {c} channels"
        )));
    }
    if t == 0 {
        return Ok(0.0);
    }
    let total: f64 = window.data()[first * t..(first + 3) * t]
        .iter()
        .map(|v| v.abs() as f64)
        .sum();
    Ok((total / t as f64) as f32 * layout.intensity_scale)
}

/// Resistance target from activity base level and motion intensity.
///
/// `window` must be denoised but not normalized.
pub fn synthesize_resistance(window: &Tensor, activity: usize, spec: &DatasetSpec) -> DataResult<f32> {
    let base = spec.base_resistance(activity).ok_or(DataError::UnmappedActivity {
        dataset: spec.kind,
        activity,
    })?;
    let sma = signal_magnitude_area(window, &spec.layout)?;
    let intensity = if sma.is_finite() {
        (sma / SMA_REFERENCE).min(1.0)
    } else {
        1.0
    };
    Ok((base + RESISTANCE_GAIN * (intensity - 0.5)).clamp(0.0, 1.0))
}
