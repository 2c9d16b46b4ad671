//! Fixed per-dataset label tables and channel layouts.
//!
//! Each label carries the base resistance used by target synthesis: how hard
//! the lower limbs work against load in that activity, on a 0–1 scale.

use serde::{Deserialize, Serialize};

use super::{ChannelLayout, DatasetKind, SensorKind};

/// Standard gravity; UCI HAR stores acceleration in g.
pub const UCI_GRAVITY: f32 = 9.80665;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityLabel {
    pub name: String,
    pub base_resistance: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub labels: Vec<ActivityLabel>,
    pub layout: ChannelLayout,
    pub sample_rate_hz: f32,
    /// `None` when the dataset ships pre-windowed.
    pub window_len: Option<usize>,
    pub overlap: f32,
}

fn table(rows: &[(&str, f32)]) -> Vec<ActivityLabel> {
    rows.iter()
        .map(|&(name, base)| ActivityLabel {
            name: name.to_string(),
            base_resistance: base,
        })
        .collect()
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn base_resistance(&self, activity: usize) -> Option<f32> {
        self.labels.get(activity).map(|l| l.base_resistance)
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn for_kind(kind: DatasetKind) -> Self {
        use SensorKind::{Accel, Gyro};
        match kind {
            // y_*.txt ids 1..=6 map to 0..=5 in file order.
            DatasetKind::UciHar => Self {
                kind,
                labels: table(&[
                    ("WALKING", 0.45),
                    ("WALKING_UPSTAIRS", 0.70),
                    ("WALKING_DOWNSTAIRS", 0.55),
                    ("SITTING", 0.10),
                    ("STANDING", 0.15),
                    ("LAYING", 0.05),
                ]),
                layout: ChannelLayout::from_triples(
                    &[("body_acc", Accel), ("body_gyro", Gyro), ("total_acc", Accel)],
                    6,
                    UCI_GRAVITY,
                ),
                sample_rate_hz: 50.0,
                window_len: None,
                overlap: 0.5,
            },
            DatasetKind::Wisdm => Self {
                kind,
                labels: table(&[
                    ("Walking", 0.45),
                    ("Jogging", 0.85),
                    ("Upstairs", 0.70),
                    ("Downstairs", 0.55),
                    ("Sitting", 0.10),
                    ("Standing", 0.15),
                ]),
                layout: ChannelLayout::from_triples(&[("acc", Accel)], 0, 1.0),
                sample_rate_hz: 20.0,
                window_len: Some(200),
                overlap: 0.5,
            },
            // Labels 1..=12; 0 is the null class and never reaches a window.
            DatasetKind::Mhealth => Self {
                kind,
                labels: table(&[
                    ("standing_still", 0.15),
                    ("sitting_relaxing", 0.10),
                    ("lying_down", 0.05),
                    ("walking", 0.45),
                    ("climbing_stairs", 0.70),
                    ("waist_bends_forward", 0.30),
                    ("frontal_arm_elevation", 0.20),
                    ("knees_bending", 0.65),
                    ("cycling", 0.60),
                    ("jogging", 0.85),
                    ("running", 0.85),
                    ("jump_front_back", 0.90),
                ]),
                layout: ChannelLayout::from_triples(
                    &[
                        ("chest_acc", Accel),
                        ("ankle_acc", Accel),
                        ("ankle_gyro", Gyro),
                        ("arm_acc", Accel),
                        ("arm_gyro", Gyro),
                    ],
                    3,
                    1.0,
                ),
                sample_rate_hz: 50.0,
                window_len: Some(128),
                overlap: 0.5,
            },
            DatasetKind::Synthetic => Self {
                kind,
                labels: table(&[("slow", 0.2), ("medium", 0.5), ("fast", 0.8)]),
                layout: ChannelLayout::from_triples(&[("acc", Accel), ("gyro", Gyro), ("acc2", Accel)], 0, 1.0),
                sample_rate_hz: 50.0,
                window_len: None,
                overlap: 0.5,
            },
        }
    }
}
