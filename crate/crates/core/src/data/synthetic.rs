//! Three-class sinusoid dataset for smoke tests and trainability checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::signal::{denoise_window, synthesize_resistance};
use super::{DataResult, DatasetKind, DatasetSpec, LabeledWindow};
use crate::Tensor;

/// Dominant frequency of each class.
pub const SYNTHETIC_FREQUENCIES_HZ: [f32; 3] = [1.0, 3.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub per_class: usize,
    pub window_len: usize,
    pub subjects: u32,
    /// Peak of the uniform additive noise, m/s².
    pub noise: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            per_class: 60,
            window_len: 128,
            subjects: 5,
            noise: 0.5,
        }
    }
}

/// Every channel of a class-`k` window is a sinusoid at the class frequency
/// with random amplitude and phase, plus noise.
pub fn synthetic_windows(config: &SyntheticConfig, seed: u64) -> DataResult<Vec<LabeledWindow>> {
    let spec = DatasetSpec::for_kind(DatasetKind::Synthetic);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = spec.layout.channels();
    let t = config.window_len;
    let mut out = Vec::with_capacity(config.per_class * SYNTHETIC_FREQUENCIES_HZ.len());
    for i in 0..config.per_class {
        for (class, &freq) in SYNTHETIC_FREQUENCIES_HZ.iter().enumerate() {
            let mut data = Vec::with_capacity(channels * t);
            for _ in 0..channels {
                let amp: f32 = rng.gen_range(2.0..8.0);
                let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
                for s in 0..t {
                    let time = s as f32 / spec.sample_rate_hz;
                    let noise = if config.noise > 0.0 {
                        rng.gen_range(-config.noise..config.noise)
                    } else {
                        0.0
                    };
                    data.push(amp * (std::f32::consts::TAU * freq * time + phase).sin() + noise);
                }
            }
            let window = denoise_window(&Tensor::new(vec![channels, t], data).expect("synthetic shape"));
            let resistance = synthesize_resistance(&window, class, &spec)?;
            let uid = out.len() as u64;
            out.push(LabeledWindow {
                window,
                activity: class,
                resistance,
                subject_id: (i as u32 % config.subjects.max(1)) + 1,
                source: DatasetKind::Synthetic,
                uid,
            });
        }
    }
    Ok(out)
}
