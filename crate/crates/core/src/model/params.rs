use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Backbone, ModelConfig};
use super::ModelError;
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

/// Every named tensor of one network: trainable weights plus batch-norm
/// running statistics (`*.running_mean`, `*.running_var`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams<S> {
    tensors: BTreeMap<String, TensorOf<S>>,
}

/// Whether `name` is a running statistic rather than a trained parameter.
pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

/// Whether decoupled weight decay applies to `name`: convolution and
/// fully connected weights only, never biases or batch-norm affine terms.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with(".kernels")
}

impl<S: Scalar> ModelParams<S> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&TensorOf<S>, ModelError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut TensorOf<S>, ModelError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: TensorOf<S>) -> Option<TensorOf<S>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn remove(&mut self, name: &str) -> Option<TensorOf<S>> {
        self.tensors.remove(name)
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorOf<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut TensorOf<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn trainable_count(&self) -> usize {
        self.iter().filter(|(n, _)| !is_buffer(n)).map(|(_, t)| t.len()).sum()
    }

    /// Every allocated scalar, running statistics included.
    pub fn element_count(&self) -> usize {
        self.tensors.values().map(TensorOf::len).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), TensorOf::zeros(v.shape())))
                .collect(),
        }
    }
}

impl<S> FromIterator<(String, TensorOf<S>)> for ModelParams<S> {
    fn from_iter<I: IntoIterator<Item = (String, TensorOf<S>)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Kind of tensor in the layout; decides its initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// He-uniform with the given fan-in.
    HeUniform(usize),
    Zeros,
    Ones,
}

/// Names, shapes and initializers of every tensor the config needs, in
/// topology order.
pub(crate) fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let bn = |out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, c: usize| {
        out.push((format!("{prefix}.gamma"), vec![c], Init::Ones));
        out.push((format!("{prefix}.beta"), vec![c], Init::Zeros));
        out.push((format!("{prefix}.running_mean"), vec![c], Init::Zeros));
        out.push((format!("{prefix}.running_var"), vec![c], Init::Ones));
    };
    let mut channels = config.input_channels;
    match &config.backbone {
        Backbone::Mobilenet => {
            out.push((
                "stem.conv.weight".into(),
                vec![config.stem_channels, channels],
                Init::HeUniform(channels),
            ));
            bn(&mut out, "stem.bn", config.stem_channels);
            channels = config.stem_channels;
            for (i, b) in config.blocks.iter().enumerate() {
                let p = format!("blocks.{i}");
                let e = b.expand_channels;
                out.push((
                    format!("{p}.expand.weight"),
                    vec![e, channels],
                    Init::HeUniform(channels),
                ));
                bn(&mut out, &format!("{p}.expand.bn"), e);
                out.push((
                    format!("{p}.depthwise.kernels"),
                    vec![e, b.kernel_size],
                    Init::HeUniform(b.kernel_size),
                ));
                bn(&mut out, &format!("{p}.depthwise.bn"), e);
                if config.se_active(b) {
                    let h = config.se_hidden(e);
                    out.push((format!("{p}.se.squeeze.weight"), vec![h, e], Init::HeUniform(e)));
                    out.push((format!("{p}.se.squeeze.bias"), vec![h], Init::Zeros));
                    out.push((format!("{p}.se.excite.weight"), vec![e, h], Init::HeUniform(h)));
                    out.push((format!("{p}.se.excite.bias"), vec![e], Init::Zeros));
                }
                out.push((
                    format!("{p}.project.weight"),
                    vec![b.out_channels, e],
                    Init::HeUniform(e),
                ));
                bn(&mut out, &format!("{p}.project.bn"), b.out_channels);
                channels = b.out_channels;
            }
        }
        Backbone::PlainConv {
            channels: widths,
            kernel_size,
        } => {
            for (i, &w) in widths.iter().enumerate() {
                let fan_in = channels * kernel_size;
                out.push((
                    format!("plain.{i}.conv.weight"),
                    vec![w, channels, *kernel_size],
                    Init::HeUniform(fan_in),
                ));
                bn(&mut out, &format!("plain.{i}.bn"), w);
                channels = w;
            }
        }
    }
    out.push((
        "head.conv.weight".into(),
        vec![config.feature_dim, channels],
        Init::HeUniform(channels),
    ));
    bn(&mut out, "head.bn", config.feature_dim);
    let d = config.feature_dim;
    if config.has_activity_head() {
        out.push((
            "activity_head.weight".into(),
            vec![config.num_classes, d],
            Init::HeUniform(d),
        ));
        out.push(("activity_head.bias".into(), vec![config.num_classes], Init::Zeros));
    }
    if config.has_resistance_head() {
        out.push(("resistance_head.weight".into(), vec![1, d], Init::HeUniform(d)));
        out.push(("resistance_head.bias".into(), vec![1], Init::Zeros));
    }
    out
}

/// Allocates and initializes every tensor for `config`: He-uniform weights
/// (`bound = sqrt(6 / fan_in)`), zero biases, `gamma = 1`, `beta = 0`,
/// running statistics `(0, 1)`. Deterministic per seed.
pub fn build_model<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<S>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, shape, init) in layout(config) {
        let t = init_tensor(&shape, init, &mut rng);
        params.insert(name, t);
    }
    Ok(params)
}

pub(crate) fn init_tensor<S: Scalar, R: Rng>(shape: &[usize], init: Init, rng: &mut R) -> TensorOf<S> {
    match init {
        Init::Zeros => TensorOf::zeros(shape),
        Init::Ones => TensorOf::full(shape, S::one()),
        Init::HeUniform(fan_in) => {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| S::lit(rng.gen_range(-bound..bound))).collect();
            TensorOf::new(shape.to_vec(), data).expect("layout shape")
        }
    }
}

/// Re-draws one tensor of an existing parameter set with its layout
/// initializer (used when a head changes shape).
pub fn reinit_tensor<S: Scalar>(
    params: &mut ModelParams<S>,
    config: &ModelConfig,
    name: &str,
    seed: u64,
) -> Result<(), ModelError> {
    let (_, shape, init) = layout(config)
        .into_iter()
        .find(|(n, _, _)| n == name)
        .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.insert(name, init_tensor(&shape, init, &mut rng));
    Ok(())
}
