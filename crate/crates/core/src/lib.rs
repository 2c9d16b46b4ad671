//! Mobile multi-task network for wearable inertial sensing.
//!
//! A 1-D MobileNetV3-style backbone (depthwise separable convolutions,
//! squeeze-and-excitation, swish) feeds two heads: activity classification
//! and lower-limb resistance regression. The crate covers the whole loop:
//! dataset parsing and windowing, resistance-target synthesis, training with
//! Adam and a step schedule, checkpoint persistence, evaluation metrics and a
//! batch-1 latency/throughput benchmark.
//!
//! Numeric code in [`nn`] and [`model`] is generic over [`Scalar`]; the
//! aliases below fix it to `f32`, the storage and inference precision.

pub mod data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;
pub use tensor::{ShapeError, TensorOf};

/// 32-bit tensor used for storage, training and inference.
pub type Tensor = TensorOf<f32>;

/// 32-bit parameter set.
pub type Params = model::ModelParams<f32>;
