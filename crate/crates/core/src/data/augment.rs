//! Train-time transforms: augmentation, class rebalancing, splitting.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelLayout, DataError, DataResult, LabeledWindow};
use crate::Tensor;

/// Fraction of the window kept by a random crop.
const CROP_FRACTION: f64 = 0.9;
/// Largest rotation angle, degrees.
const MAX_ROTATION_DEG: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentOp {
    Crop,
    Rotate,
    Flip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rebalance {
    #[default]
    Oversample,
    Undersample,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Random,
    BySubject,
}

fn crop(window: &Tensor, rng: &mut impl Rng) -> Tensor {
    let (c, t) = (window.shape()[0], window.shape()[1]);
    if t < 2 {
        return window.clone();
    }
    let keep = ((t as f64 * CROP_FRACTION).round() as usize).clamp(2, t);
    let start = rng.gen_range(0..=t - keep);
    let mut out = Vec::with_capacity(c * t);
    for row in window.data().chunks(t) {
        let sub = &row[start..start + keep];
        for i in 0..t {
            let pos = i as f64 * (keep - 1) as f64 / (t - 1) as f64;
            let lo = (pos.floor() as usize).min(keep - 2);
            let frac = pos - lo as f64;
            out.push((sub[lo] as f64 * (1.0 - frac) + sub[lo + 1] as f64 * frac) as f32);
        }
    }
    Tensor::new(vec![c, t], out).expect("crop shape")
}

/// Rotation by `angle` radians about the unit vector `axis` (Rodrigues).
pub fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let v = 1.0 - c;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
    ]
}

fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    // uniform direction on the sphere
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    let angle = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
    rotation_matrix([r * phi.cos(), r * phi.sin(), z], angle)
}

fn rotate(window: &Tensor, layout: &ChannelLayout, rng: &mut impl Rng) -> DataResult<Tensor> {
    let (c, t) = (window.shape()[0], window.shape()[1]);
    if layout.triples.is_empty() || c % 3 != 0 || layout.triples.iter().any(|tr| tr.first + 3 > c) {
        return Err(DataError::InvalidArgument(format!(
            "{c} channels cannot be grouped into sensor triples"
        )));
    }
    let m = random_rotation(rng);
    let mut out = window.clone();
    let src = window.data();
    let dst = out.data_mut();
    for tr in &layout.triples {
        let base = tr.first * t;
        for i in 0..t {
            let v = [0, 1, 2].map(|a| src[base + a * t + i] as f64);
            for (a, row) in m.iter().enumerate() {
                dst[base + a * t + i] = (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]) as f32;
            }
        }
    }
    Ok(out)
}

fn flip(window: &Tensor) -> Tensor {
    let t = window.shape()[1];
    let mut out = window.clone();
    if t > 0 {
        out.data_mut().chunks_mut(t).for_each(|row| row.reverse());
    }
    out
}

/// Applies the requested ops in crop → rotate → flip order.
pub fn augment(window: &Tensor, layout: &ChannelLayout, rng: &mut impl Rng, ops: &[AugmentOp]) -> DataResult<Tensor> {
    let mut out = window.clone();
    if ops.contains(&AugmentOp::Crop) {
        out = crop(&out, rng);
    }
    if ops.contains(&AugmentOp::Rotate) {
        out = rotate(&out, layout, rng)?;
    }
    if ops.contains(&AugmentOp::Flip) {
        out = flip(&out);
    }
    Ok(out)
}

/// Equalizes class counts by duplicating (with replacement) or dropping windows.
pub fn rebalance(windows: &[LabeledWindow], strategy: Rebalance, rng: &mut impl Rng) -> DataResult<Vec<LabeledWindow>> {
    if windows.is_empty() {
        return Err(DataError::Empty("rebalance needs at least one window"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_class.entry(w.activity).or_default().push(i);
    }
    match strategy {
        Rebalance::None => Ok(windows.to_vec()),
        Rebalance::Oversample => {
            let max = by_class.values().map(Vec::len).max().unwrap_or(0);
            let mut out = windows.to_vec();
            for idx in by_class.values() {
                for _ in idx.len()..max {
                    out.push(windows[*idx.choose(rng).expect("non-empty class")].clone());
                }
            }
            Ok(out)
        }
        Rebalance::Undersample => {
            let min = by_class.values().map(Vec::len).min().unwrap_or(0);
            let mut keep = vec![false; windows.len()];
            for idx in by_class.values() {
                for &i in idx.choose_multiple(rng, min) {
                    keep[i] = true;
                }
            }
            Ok(windows
                .iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(w, _)| w.clone())
                .collect())
        }
    }
}

/// Splits into (train, rest). `BySubject` keeps every subject on one side.
pub fn split(
    windows: &[LabeledWindow],
    train_fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> DataResult<(Vec<LabeledWindow>, Vec<LabeledWindow>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..windows.len()).collect();
            idx.shuffle(&mut rng);
            let n_train = (train_fraction * windows.len() as f64).round() as usize;
            let (a, b) = idx.split_at(n_train);
            Ok((
                a.iter().map(|&i| windows[i].clone()).collect(),
                b.iter().map(|&i| windows[i].clone()).collect(),
            ))
        }
        SplitMode::BySubject => {
            let mut subjects: Vec<u32> = windows
                .iter()
                .map(|w| w.subject_id)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if subjects.len() < 2 {
                return Err(DataError::InvalidArgument(
                    "subject split needs at least two subjects".into(),
                ));
            }
            subjects.shuffle(&mut rng);
            let n_train = ((train_fraction * subjects.len() as f64).round() as usize).clamp(1, subjects.len() - 1);
            let train_set: BTreeSet<u32> = subjects[..n_train].iter().copied().collect();
            Ok(windows.iter().cloned().partition(|w| train_set.contains(&w.subject_id)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetKind, DatasetSpec};

    fn labeled(activity: usize, uid: u64) -> LabeledWindow {
        LabeledWindow {
            window: Tensor::zeros(&[3, 4]),
            activity,
            resistance: 0.5,
            subject_id: (uid % 5) as u32,
            source: DatasetKind::Synthetic,
            uid,
        }
    }

    fn counts(ws: &[LabeledWindow]) -> Vec<usize> {
        crate::data::class_counts(ws, 2)
    }

    #[test]
    fn rebalance_examples() {
        let ws: Vec<_> = (0..14).map(|i| labeled(usize::from(i >= 10), i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            counts(&rebalance(&ws, Rebalance::Oversample, &mut rng).unwrap()),
            vec![10, 10]
        );
        assert_eq!(
            counts(&rebalance(&ws, Rebalance::Undersample, &mut rng).unwrap()),
            vec![4, 4]
        );
        assert_eq!(rebalance(&ws, Rebalance::None, &mut rng).unwrap(), ws);
    }

    #[test]
    fn flip_twice_is_identity() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.5]]);
        let layout = DatasetSpec::for_kind(DatasetKind::Wisdm).layout;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = augment(&w, &layout, &mut rng, &[AugmentOp::Flip]).unwrap();
        assert_eq!(once.data()[..3], [3.0, 2.0, 1.0]);
        assert_eq!(augment(&once, &layout, &mut rng, &[AugmentOp::Flip]).unwrap(), w);
    }

    #[test]
    fn rotation_needs_triples() {
        let layout = DatasetSpec::for_kind(DatasetKind::Wisdm).layout;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Tensor::zeros(&[4, 10]);
        assert!(augment(&w, &layout, &mut rng, &[AugmentOp::Rotate]).is_err());
        assert!(augment(&w, &layout, &mut rng, &[AugmentOp::Crop, AugmentOp::Flip]).is_ok());
    }

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let m = rotation_matrix([0.0, 0.6, 0.8], 0.3);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
    }
}
