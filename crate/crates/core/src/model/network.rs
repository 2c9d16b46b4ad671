//! Forward pass over a batch with an optional tape, and reverse-mode
//! backward over that tape.

use rand::Rng;

use super::config::{Backbone, ModelConfig};
use super::params::{is_buffer, ModelParams};
use super::se::{se_backward, se_forward, SeCache, SeWeights};
use super::ModelError;
use crate::nn::{self, ActivationKind, BatchNormCache, Mode};
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

/// Batch statistics observed by one train-mode batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate<S> {
    pub prefix: String,
    pub mean: Vec<S>,
    /// Unbiased batch variance.
    pub var: Vec<S>,
}

#[derive(Debug, Clone)]
enum Step<S> {
    Pointwise {
        input: TensorOf<S>,
        weight: String,
    },
    Conv {
        input: TensorOf<S>,
        weight: String,
        stride: usize,
        padding: usize,
    },
    Depthwise {
        input: TensorOf<S>,
        kernels: String,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        prefix: String,
        cache: BatchNormCache<S>,
    },
    Act {
        input: TensorOf<S>,
        kind: ActivationKind,
    },
    Se {
        input: TensorOf<S>,
        prefix: String,
        cache: SeCache<S>,
    },
    ResidualFork,
    ResidualJoin,
    Pool {
        shape: Vec<usize>,
    },
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    steps: Vec<Step<S>>,
    /// Features after dropout, `[B, D]`.
    head_input: TensorOf<S>,
    dropout_mask: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput<S> {
    /// Pooled features before dropout, `[B, feature_dim]`.
    pub features: TensorOf<S>,
    /// Class probabilities `[B, num_classes]` when the activity head exists.
    pub probs: Option<TensorOf<S>>,
    /// Raw resistance estimates, one per window, when the resistance head exists.
    pub resistance: Option<Vec<S>>,
    pub tape: Option<Tape<S>>,
    pub bn_updates: Vec<BnUpdate<S>>,
}

struct Runner<'a, S: Scalar> {
    config: &'a ModelConfig,
    params: &'a ModelParams<S>,
    mode: Mode,
    steps: Option<Vec<Step<S>>>,
    bn_updates: Vec<BnUpdate<S>>,
}

impl<S: Scalar> Runner<'_, S> {
    fn record(&mut self, step: impl FnOnce() -> Step<S>) {
        if let Some(steps) = &mut self.steps {
            steps.push(step());
        }
    }

    fn pointwise(&mut self, x: TensorOf<S>, weight: &str) -> Result<TensorOf<S>, ModelError> {
        let y = nn::conv1d_pointwise(&x, self.params.get(weight)?, None)?;
        self.record(|| Step::Pointwise {
            input: x,
            weight: weight.to_string(),
        });
        Ok(y)
    }

    fn depthwise(&mut self, x: TensorOf<S>, kernels: &str, stride: usize) -> Result<TensorOf<S>, ModelError> {
        let k = self.params.get(kernels)?;
        let padding = nn::same_padding(k.shape()[1]);
        let y = nn::conv1d_depthwise(&x, k, stride, padding)?;
        self.record(|| Step::Depthwise {
            input: x,
            kernels: kernels.to_string(),
            stride,
            padding,
        });
        Ok(y)
    }

    fn conv(&mut self, x: TensorOf<S>, weight: &str, stride: usize) -> Result<TensorOf<S>, ModelError> {
        let w = self.params.get(weight)?;
        let padding = nn::same_padding(w.shape()[2]);
        let y = nn::conv1d(&x, w, None, stride, padding)?;
        self.record(|| Step::Conv {
            input: x,
            weight: weight.to_string(),
            stride,
            padding,
        });
        Ok(y)
    }

    fn bn(&mut self, x: TensorOf<S>, prefix: &str) -> Result<TensorOf<S>, ModelError> {
        let p = self.params;
        let gamma = p.get(&format!("{prefix}.gamma"))?;
        let beta = p.get(&format!("{prefix}.beta"))?;
        let eps = S::lit(nn::norm_defaults::EPSILON);
        let (y, cache) = match self.mode {
            Mode::Train => {
                let (y, cache) = nn::batch_norm_train(&x, gamma, beta, eps)?;
                let n = x.len() / gamma.len();
                let corr = if n > 1 {
                    S::of_usize(n) / S::of_usize(n - 1)
                } else {
                    S::one()
                };
                self.bn_updates.push(BnUpdate {
                    prefix: prefix.to_string(),
                    mean: cache.batch_mean().unwrap().to_vec(),
                    var: cache.batch_var().unwrap().iter().map(|&v| v * corr).collect(),
                });
                (y, cache)
            }
            Mode::Eval => nn::batch_norm_eval(
                &x,
                gamma,
                beta,
                p.get(&format!("{prefix}.running_mean"))?,
                p.get(&format!("{prefix}.running_var"))?,
                eps,
            )?,
        };
        self.record(|| Step::BatchNorm {
            prefix: prefix.to_string(),
            cache,
        });
        Ok(y)
    }

    fn act(&mut self, x: TensorOf<S>, kind: ActivationKind) -> Result<TensorOf<S>, ModelError> {
        let kind = self.config.effective(kind);
        let y = nn::activation(&x, kind)?;
        self.record(|| Step::Act { input: x, kind });
        Ok(y)
    }

    fn se(&mut self, x: TensorOf<S>, prefix: &str) -> Result<TensorOf<S>, ModelError> {
        let w = se_weights(self.params, prefix)?;
        let (y, cache) = se_forward(&x, w)?;
        self.record(|| Step::Se {
            input: x,
            prefix: prefix.to_string(),
            cache,
        });
        Ok(y)
    }

    fn backbone(&mut self, x: TensorOf<S>) -> Result<TensorOf<S>, ModelError> {
        let config = self.config;
        let mut h = x;
        match &config.backbone {
            Backbone::Mobilenet => {
                h = self.pointwise(h, "stem.conv.weight")?;
                h = self.bn(h, "stem.bn")?;
                h = self.act(h, ActivationKind::Swish)?;
                let mut channels = config.stem_channels;
                for (i, b) in config.blocks.iter().enumerate() {
                    let p = format!("blocks.{i}");
                    let residual = b.stride == 1 && channels == b.out_channels;
                    let skip = residual.then(|| h.clone());
                    if residual {
                        self.record(|| Step::ResidualFork);
                    }
                    h = self.pointwise(h, &format!("{p}.expand.weight"))?;
                    h = self.bn(h, &format!("{p}.expand.bn"))?;
                    h = self.act(h, b.activation)?;
                    h = self.depthwise(h, &format!("{p}.depthwise.kernels"), b.stride)?;
                    h = self.bn(h, &format!("{p}.depthwise.bn"))?;
                    h = self.act(h, b.activation)?;
                    if config.se_active(b) {
                        h = self.se(h, &format!("{p}.se"))?;
                    }
                    h = self.pointwise(h, &format!("{p}.project.weight"))?;
                    h = self.bn(h, &format!("{p}.project.bn"))?;
                    if let Some(skip) = skip {
                        h.add_assign(&skip);
                        self.record(|| Step::ResidualJoin);
                    }
                    channels = b.out_channels;
                }
            }
            Backbone::PlainConv { channels, .. } => {
                for i in 0..channels.len() {
                    h = self.conv(h, &format!("plain.{i}.conv.weight"), 2)?;
                    h = self.bn(h, &format!("plain.{i}.bn"))?;
                    h = self.act(h, ActivationKind::Swish)?;
                }
            }
        }
        h = self.pointwise(h, "head.conv.weight")?;
        h = self.bn(h, "head.bn")?;
        h = self.act(h, ActivationKind::Swish)?;
        let shape = h.shape().to_vec();
        let pooled = nn::global_avg_pool(&h)?;
        self.record(|| Step::Pool { shape });
        Ok(pooled)
    }
}

pub(crate) fn se_weights<'p, S: Scalar>(
    params: &'p ModelParams<S>,
    prefix: &str,
) -> Result<SeWeights<'p, S>, ModelError> {
    Ok(SeWeights {
        w_sq: params.get(&format!("{prefix}.squeeze.weight"))?,
        b_sq: params.get(&format!("{prefix}.squeeze.bias"))?,
        w_ex: params.get(&format!("{prefix}.excite.weight"))?,
        b_ex: params.get(&format!("{prefix}.excite.bias"))?,
    })
}

fn check_input<S: Scalar>(config: &ModelConfig, x: &TensorOf<S>) -> Result<(), ModelError> {
    let (c, t) = match *x.shape() {
        [_, c, t] => (c, t),
        ref s => return Err(ModelError::Shape(format!("batch must be [B, C, T], got {s:?}"))),
    };
    if c != config.input_channels {
        return Err(ModelError::Shape(format!(
            "window has {c} channels, model expects {}",
            config.input_channels
        )));
    }
    if t < config.total_stride() || t == 0 {
        return Err(ModelError::Shape(format!(
            "window length {t} below total stride {}",
            config.total_stride()
        )));
    }
    Ok(())
}

/// Runs the backbone and returns pooled features `[B, feature_dim]`.
pub fn features_batch<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    x: &TensorOf<S>,
    mode: Mode,
) -> Result<TensorOf<S>, ModelError> {
    check_input(config, x)?;
    let mut runner = Runner {
        config,
        params,
        mode,
        steps: None,
        bn_updates: Vec::new(),
    };
    runner.backbone(x.clone())
}

/// Full forward pass over a `[B, C, T]` batch. With `record` set the
/// returned tape supports [`backward_batch`].
pub fn forward_batch<S: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    x: &TensorOf<S>,
    mode: Mode,
    record: bool,
    rng: &mut R,
) -> Result<BatchOutput<S>, ModelError> {
    check_input(config, x)?;
    let mut runner = Runner {
        config,
        params,
        mode,
        steps: record.then(Vec::new),
        bn_updates: Vec::new(),
    };
    let features = runner.backbone(x.clone())?;
    let dropped = nn::dropout(&features, config.dropout_rate, mode, rng)?;
    let probs = if config.has_activity_head() {
        let logits = nn::fully_connected(
            &dropped.output,
            params.get("activity_head.weight")?,
            params.get("activity_head.bias")?,
        )?;
        Some(nn::softmax(&logits)?)
    } else {
        None
    };
    let resistance = if config.has_resistance_head() {
        let r = nn::fully_connected(
            &dropped.output,
            params.get("resistance_head.weight")?,
            params.get("resistance_head.bias")?,
        )?;
        Some(r.into_data())
    } else {
        None
    };
    let tape = runner.steps.take().map(|steps| Tape {
        steps,
        head_input: dropped.output,
        dropout_mask: dropped.mask,
    });
    Ok(BatchOutput {
        features,
        probs,
        resistance,
        tape,
        bn_updates: runner.bn_updates,
    })
}

fn accumulate<S: Scalar>(grads: &mut ModelParams<S>, name: &str, g: &TensorOf<S>) -> Result<(), ModelError> {
    grads.get_mut(name)?.add_assign(g);
    Ok(())
}

/// Reverse pass. `d_logits` is the loss gradient w.r.t. the activity logits
/// `[B, num_classes]`; `d_resistance` w.r.t. each raw resistance output.
/// Returns gradients for every trainable tensor (running statistics are
/// omitted).
pub fn backward_batch<S: Scalar>(
    params: &ModelParams<S>,
    config: &ModelConfig,
    tape: &Tape<S>,
    d_logits: Option<&TensorOf<S>>,
    d_resistance: Option<&[S]>,
) -> Result<ModelParams<S>, ModelError> {
    let mut grads: ModelParams<S> = params
        .iter()
        .filter(|(n, _)| !is_buffer(n))
        .map(|(n, t)| (n.to_string(), TensorOf::zeros(t.shape())))
        .collect();
    let mut d_feat = TensorOf::zeros(tape.head_input.shape());
    if let (Some(dl), true) = (d_logits, config.has_activity_head()) {
        let g = nn::fully_connected_backward(&tape.head_input, params.get("activity_head.weight")?, dl)?;
        accumulate(&mut grads, "activity_head.weight", &g.param_grads["weight"])?;
        accumulate(&mut grads, "activity_head.bias", &g.param_grads["bias"])?;
        d_feat.add_assign(&g.input_grad);
    }
    if let (Some(dr), true) = (d_resistance, config.has_resistance_head()) {
        let dr = TensorOf::new(vec![dr.len(), 1], dr.to_vec()).map_err(|e| ModelError::Shape(e.to_string()))?;
        let g = nn::fully_connected_backward(&tape.head_input, params.get("resistance_head.weight")?, &dr)?;
        accumulate(&mut grads, "resistance_head.weight", &g.param_grads["weight"])?;
        accumulate(&mut grads, "resistance_head.bias", &g.param_grads["bias"])?;
        d_feat.add_assign(&g.input_grad);
    }
    let mut g = nn::dropout_backward(&tape.dropout_mask, &d_feat)?.input_grad;
    let mut skips: Vec<TensorOf<S>> = Vec::new();
    for step in tape.steps.iter().rev() {
        g = match step {
            Step::Pool { shape } => nn::global_avg_pool_backward(shape, &g)?.input_grad,
            Step::Act { input, kind } => nn::activation_backward(input, *kind, &g)?.input_grad,
            Step::BatchNorm { prefix, cache } => {
                let lg = nn::batch_norm_backward(cache, params.get(&format!("{prefix}.gamma"))?, &g)?;
                accumulate(&mut grads, &format!("{prefix}.gamma"), &lg.param_grads["gamma"])?;
                accumulate(&mut grads, &format!("{prefix}.beta"), &lg.param_grads["beta"])?;
                lg.input_grad
            }
            Step::Pointwise { input, weight } => {
                let lg = nn::conv1d_pointwise_backward(input, params.get(weight)?, false, &g)?;
                accumulate(&mut grads, weight, &lg.param_grads["weight"])?;
                lg.input_grad
            }
            Step::Conv {
                input,
                weight,
                stride,
                padding,
            } => {
                let lg = nn::conv1d_backward(input, params.get(weight)?, false, *stride, *padding, &g)?;
                accumulate(&mut grads, weight, &lg.param_grads["weight"])?;
                lg.input_grad
            }
            Step::Depthwise {
                input,
                kernels,
                stride,
                padding,
            } => {
                let lg = nn::conv1d_depthwise_backward(input, params.get(kernels)?, *stride, *padding, &g)?;
                accumulate(&mut grads, kernels, &lg.param_grads["kernels"])?;
                lg.input_grad
            }
            Step::Se { input, prefix, cache } => {
                let lg = se_backward(input, cache, se_weights(params, prefix)?, &g)?;
                for (name, pg) in &lg.param_grads {
                    accumulate(&mut grads, &format!("{prefix}.{name}"), pg)?;
                }
                lg.input_grad
            }
            Step::ResidualJoin => {
                skips.push(g.clone());
                g
            }
            Step::ResidualFork => {
                let skip = skips.pop().expect("residual join precedes fork in reverse order");
                g.add_assign(&skip);
                g
            }
        };
    }
    Ok(grads)
}

/// Folds train-mode batch statistics into the running estimates:
/// `new = (1 − momentum)·old + momentum·batch`.
pub fn apply_bn_updates<S: Scalar>(params: &mut ModelParams<S>, updates: &[BnUpdate<S>]) -> Result<(), ModelError> {
    let m = S::lit(nn::norm_defaults::MOMENTUM);
    let keep = S::one() - m;
    for u in updates {
        let rm = params.get_mut(&format!("{}.running_mean", u.prefix))?;
        for (r, &b) in rm.data_mut().iter_mut().zip(&u.mean) {
            *r = keep * *r + m * b;
        }
        let rv = params.get_mut(&format!("{}.running_var", u.prefix))?;
        for (r, &b) in rv.data_mut().iter_mut().zip(&u.var) {
            *r = keep * *r + m * b;
        }
    }
    Ok(())
}
