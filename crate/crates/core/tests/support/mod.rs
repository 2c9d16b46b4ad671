//! Independent reference implementations and finite-difference helpers
//! shared by the integration suites.
#![allow(dead_code)]

use mmtl_core::TensorOf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorOf<f64> {
    let n = shape.iter().product();
    TensorOf::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Depthwise convolution over an explicitly zero-padded copy of each channel.
pub fn naive_depthwise(x: &[Vec<f64>], k: &[Vec<f64>], stride: usize, padding: usize) -> Vec<Vec<f64>> {
    x.iter()
        .zip(k)
        .map(|(row, kern)| {
            let mut padded = vec![0.0; padding];
            padded.extend_from_slice(row);
            padded.extend(std::iter::repeat_n(0.0, padding));
            let mut out = Vec::new();
            let mut start = 0;
            while start + kern.len() <= padded.len() {
                out.push((0..kern.len()).map(|j| padded[start + j] * kern[j]).sum());
                start += stride;
            }
            out
        })
        .collect()
}

/// Matrix product `W · X` with `X` laid out `[C_in][T]`.
pub fn naive_pointwise(x: &[Vec<f64>], w: &[Vec<f64>], bias: Option<&[f64]>) -> Vec<Vec<f64>> {
    let t = x[0].len();
    w.iter()
        .enumerate()
        .map(|(o, wrow)| {
            (0..t)
                .map(|ti| {
                    let mut acc = bias.map_or(0.0, |b| b[o]);
                    for (i, xrow) in x.iter().enumerate() {
                        acc += wrow[i] * xrow[ti];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn rows(t: &TensorOf<f64>) -> Vec<Vec<f64>> {
    let c = t.shape()[t.rank() - 1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

/// Relative error with the denominator clamped at `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `point`.
pub fn fd_max_rel_err(point: &[f64], analytic: &[f64], h: f64, floor: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut p = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric, floor));
    }
    worst
}

/// `Σ upstream ⊙ y`, the scalar whose gradient w.r.t. `y` is `upstream`.
pub fn contract(upstream: &TensorOf<f64>, y: &TensorOf<f64>) -> f64 {
    upstream.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

pub mod layer_grads {
    //! Finite-difference checks for every parameterized kernel, in `f64`
    //! with `h = 1e-3` and the relative-error floor at `1e-4`.

    use mmtl_core::nn::{self, ActivationKind, Mode};
    use mmtl_core::TensorOf;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use super::{contract, fd_max_rel_err, random_tensor};

    pub const H: f64 = 1e-3;
    pub const FLOOR: f64 = 1e-4;

    fn with(t: &TensorOf<f64>, data: &[f64]) -> TensorOf<f64> {
        TensorOf::new(t.shape().to_vec(), data.to_vec()).unwrap()
    }

    fn shape3(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
        (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(3..12))
    }

    pub fn depthwise(rng: &mut ChaCha8Rng) -> f64 {
        let (b, c, t) = shape3(rng);
        let k = [1, 3, 5][rng.gen_range(0..3)].min(t);
        let (stride, padding) = (rng.gen_range(1..3), rng.gen_range(0..3));
        let x = random_tensor(rng, &[b, c, t]);
        let w = random_tensor(rng, &[c, k]);
        let y = nn::conv1d_depthwise(&x, &w, stride, padding).unwrap();
        let g = random_tensor(rng, y.shape());
        let grads = nn::conv1d_depthwise_backward(&x, &w, stride, padding, &g).unwrap();
        let ex = fd_max_rel_err(x.data(), grads.input_grad.data(), H, FLOOR, |p| {
            contract(&g, &nn::conv1d_depthwise(&with(&x, p), &w, stride, padding).unwrap())
        });
        let ew = fd_max_rel_err(w.data(), grads.param_grads["kernels"].data(), H, FLOOR, |p| {
            contract(&g, &nn::conv1d_depthwise(&x, &with(&w, p), stride, padding).unwrap())
        });
        ex.max(ew)
    }

    pub fn pointwise(rng: &mut ChaCha8Rng) -> f64 {
        let (b, c, t) = shape3(rng);
        let c_out = rng.gen_range(1..5);
        let x = random_tensor(rng, &[b, c, t]);
        let w = random_tensor(rng, &[c_out, c]);
        let bias = random_tensor(rng, &[c_out]);
        let y = nn::conv1d_pointwise(&x, &w, Some(&bias)).unwrap();
        let g = random_tensor(rng, y.shape());
        let grads = nn::conv1d_pointwise_backward(&x, &w, true, &g).unwrap();
        let f = |x: &TensorOf<f64>, w: &TensorOf<f64>, b: &TensorOf<f64>| {
            contract(&g, &nn::conv1d_pointwise(x, w, Some(b)).unwrap())
        };
        let ex = fd_max_rel_err(x.data(), grads.input_grad.data(), H, FLOOR, |p| {
            f(&with(&x, p), &w, &bias)
        });
        let ew = fd_max_rel_err(w.data(), grads.param_grads["weight"].data(), H, FLOOR, |p| {
            f(&x, &with(&w, p), &bias)
        });
        let eb = fd_max_rel_err(bias.data(), grads.param_grads["bias"].data(), H, FLOOR, |p| {
            f(&x, &w, &with(&bias, p))
        });
        ex.max(ew).max(eb)
    }

    pub fn conv(rng: &mut ChaCha8Rng) -> f64 {
        let (b, c, t) = shape3(rng);
        let c_out = rng.gen_range(1..4);
        let k = [1, 3, 5][rng.gen_range(0..3)].min(t);
        let (stride, padding) = (rng.gen_range(1..3), rng.gen_range(0..3));
        let x = random_tensor(rng, &[b, c, t]);
        let w = random_tensor(rng, &[c_out, c, k]);
        let bias = random_tensor(rng, &[c_out]);
        let y = nn::conv1d(&x, &w, Some(&bias), stride, padding).unwrap();
        let g = random_tensor(rng, y.shape());
        let grads = nn::conv1d_backward(&x, &w, true, stride, padding, &g).unwrap();
        let f = |x: &TensorOf<f64>, w: &TensorOf<f64>, b: &TensorOf<f64>| {
            contract(&g, &nn::conv1d(x, w, Some(b), stride, padding).unwrap())
        };
        let ex = fd_max_rel_err(x.data(), grads.input_grad.data(), H, FLOOR, |p| {
            f(&with(&x, p), &w, &bias)
        });
        let ew = fd_max_rel_err(w.data(), grads.param_grads["weight"].data(), H, FLOOR, |p| {
            f(&x, &with(&w, p), &bias)
        });
        let eb = fd_max_rel_err(bias.data(), grads.param_grads["bias"].data(), H, FLOOR, |p| {
            f(&x, &w, &with(&bias, p))
        });
        ex.max(ew).max(eb)
    }

    pub fn batch_norm(rng: &mut ChaCha8Rng, mode: Mode) -> f64 {
        let (b, c, t) = shape3(rng);
        let b = b.max(2);
        let x = random_tensor(rng, &[b, c, t]);
        let gamma = random_tensor(rng, &[c]);
        let beta = random_tensor(rng, &[c]);
        let rm = random_tensor(rng, &[c]);
        let rv = random_tensor(rng, &[c]).map(|v| v.abs() + 0.5);
        let eps = 1e-5;
        let fwd = |x: &TensorOf<f64>, g: &TensorOf<f64>, be: &TensorOf<f64>| match mode {
            Mode::Train => nn::batch_norm_train(x, g, be, eps).unwrap(),
            Mode::Eval => nn::batch_norm_eval(x, g, be, &rm, &rv, eps).unwrap(),
        };
        let (y, cache) = fwd(&x, &gamma, &beta);
        let up = random_tensor(rng, y.shape());
        let grads = nn::batch_norm_backward(&cache, &gamma, &up).unwrap();
        let f = |x: &TensorOf<f64>, g: &TensorOf<f64>, be: &TensorOf<f64>| contract(&up, &fwd(x, g, be).0);
        let ex = fd_max_rel_err(x.data(), grads.input_grad.data(), H, FLOOR, |p| {
            f(&with(&x, p), &gamma, &beta)
        });
        let eg = fd_max_rel_err(gamma.data(), grads.param_grads["gamma"].data(), H, FLOOR, |p| {
            f(&x, &with(&gamma, p), &beta)
        });
        let eb = fd_max_rel_err(beta.data(), grads.param_grads["beta"].data(), H, FLOOR, |p| {
            f(&x, &gamma, &with(&beta, p))
        });
        ex.max(eg).max(eb)
    }

    pub fn fully_connected(rng: &mut ChaCha8Rng) -> f64 {
        let (b, d_in, d_out) = (rng.gen_range(1..4), rng.gen_range(1..8), rng.gen_range(1..6));
        let x = random_tensor(rng, &[b, d_in]);
        let w = random_tensor(rng, &[d_out, d_in]);
        let bias = random_tensor(rng, &[d_out]);
        let y = nn::fully_connected(&x, &w, &bias).unwrap();
        let g = random_tensor(rng, y.shape());
        let grads = nn::fully_connected_backward(&x, &w, &g).unwrap();
        let f = |x: &TensorOf<f64>, w: &TensorOf<f64>, b: &TensorOf<f64>| {
            contract(&g, &nn::fully_connected(x, w, b).unwrap())
        };
        let ex = fd_max_rel_err(x.data(), grads.input_grad.data(), H, FLOOR, |p| {
            f(&with(&x, p), &w, &bias)
        });
        let ew = fd_max_rel_err(w.data(), grads.param_grads["weight"].data(), H, FLOOR, |p| {
            f(&x, &with(&w, p), &bias)
        });
        let eb = fd_max_rel_err(bias.data(), grads.param_grads["bias"].data(), H, FLOOR, |p| {
            f(&x, &w, &with(&bias, p))
        });
        ex.max(ew).max(eb)
    }

    /// Parameter-free kernels: activations, pooling, softmax, dropout.
    pub fn parameter_free(rng: &mut ChaCha8Rng) -> f64 {
        let (b, c, t) = shape3(rng);
        // keep relu away from its kink
        let x = random_tensor(rng, &[b, c, t]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let mut worst = 0.0f64;
        for kind in [
            ActivationKind::Swish,
            ActivationKind::Sigmoid,
            ActivationKind::Relu,
            ActivationKind::Identity,
        ] {
            let g = random_tensor(rng, x.shape());
            let an = nn::activation_backward(&x, kind, &g).unwrap();
            worst = worst.max(fd_max_rel_err(x.data(), an.input_grad.data(), H, FLOOR, |p| {
                contract(&g, &nn::activation(&with(&x, p), kind).unwrap())
            }));
        }
        let g = random_tensor(rng, &[b, c]);
        let an = nn::global_avg_pool_backward(x.shape(), &g).unwrap();
        worst = worst.max(fd_max_rel_err(x.data(), an.input_grad.data(), H, FLOOR, |p| {
            contract(&g, &nn::global_avg_pool(&with(&x, p)).unwrap())
        }));
        let logits = random_tensor(rng, &[b, c]);
        let p = nn::softmax(&logits).unwrap();
        let g = random_tensor(rng, p.shape());
        let an = nn::softmax_backward(&p, &g).unwrap();
        worst = worst.max(fd_max_rel_err(logits.data(), an.input_grad.data(), H, FLOOR, |q| {
            contract(&g, &nn::softmax(&with(&logits, q)).unwrap())
        }));
        let seed = rng.gen::<u64>();
        let drop = |x: &TensorOf<f64>| nn::dropout(x, 0.3, Mode::Train, &mut super::rng(seed)).unwrap();
        let out = drop(&x);
        let g = random_tensor(rng, x.shape());
        let an = nn::dropout_backward(&out.mask, &g).unwrap();
        worst = worst.max(fd_max_rel_err(x.data(), an.input_grad.data(), H, FLOOR, |p| {
            contract(&g, &drop(&with(&x, p)).output)
        }));
        worst
    }
}

pub mod e2e {
    //! Whole-network gradient check against central differences.

    use mmtl_core::model::{self, BneckSpec, ModelConfig, ModelParams};
    use mmtl_core::nn::Mode;
    use mmtl_core::{Scalar, TensorOf};
    use rand::Rng;

    /// Two blocks (one residual, one strided with SE), feature_dim 8.
    pub fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_channels: 3,
            input_length: 16,
            stem_channels: 4,
            blocks: vec![BneckSpec::new(8, 4, 3, 1, true), BneckSpec::new(8, 6, 3, 2, true)],
            feature_dim: 8,
            num_classes: 3,
            dropout_rate: 0.25,
            se_reduction: 2,
            ..ModelConfig::default()
        }
    }

    pub fn batch<S: Scalar>(rng: &mut impl Rng, config: &ModelConfig, n: usize) -> (TensorOf<S>, Vec<usize>, Vec<S>) {
        let len = n * config.input_channels * config.input_length;
        let x = TensorOf::new(
            vec![n, config.input_channels, config.input_length],
            (0..len).map(|_| S::lit(rng.gen_range(-2.0..2.0))).collect(),
        )
        .unwrap();
        let labels = (0..n).map(|_| rng.gen_range(0..config.num_classes)).collect();
        let targets = (0..n).map(|_| S::lit(rng.gen_range(0.0..1.0))).collect();
        (x, labels, targets)
    }

    pub fn loss<S: Scalar>(
        params: &ModelParams<S>,
        config: &ModelConfig,
        x: &TensorOf<S>,
        labels: &[usize],
        targets: &[S],
        seed: u64,
    ) -> f64 {
        let out = model::forward_batch(params, config, x, Mode::Train, false, &mut super::rng(seed)).unwrap();
        model::batch_loss(&out, labels, targets, config).unwrap().0.total
    }

    /// Worst relative error (floor 1e-4) over every trainable scalar.
    pub fn worst_error<S: Scalar>(config: &ModelConfig, seed: u64, h: f64) -> (f64, String) {
        worst_error_with_oracle::<S, S>(config, seed, h)
    }

    /// Analytic gradients computed in `S`; the difference quotient is
    /// evaluated in `O` on the same (cast) parameters and inputs.
    pub fn worst_error_with_oracle<S: Scalar, O: Scalar>(config: &ModelConfig, seed: u64, h: f64) -> (f64, String) {
        let mut rng = super::rng(seed);
        let params: ModelParams<S> = model::build_model(config, seed).unwrap();
        let (x, labels, targets) = batch::<S>(&mut rng, config, 5);
        let oracle_params: ModelParams<O> = params.cast();
        let oracle_x: TensorOf<O> = x.cast();
        let oracle_targets: Vec<O> = targets.iter().map(|t| O::lit(t.as_f64())).collect();
        let out = model::forward_batch(&params, config, &x, Mode::Train, true, &mut super::rng(seed)).unwrap();
        let (_, og) = model::batch_loss(&out, &labels, &targets, config).unwrap();
        let grads = model::backward_batch(
            &params,
            config,
            out.tape.as_ref().unwrap(),
            og.d_logits.as_ref(),
            og.d_resistance.as_deref(),
        )
        .unwrap();
        let mut worst = (0.0, String::new());
        for (name, g) in grads.iter() {
            for i in 0..g.len() {
                let mut p = oracle_params.clone();
                let orig = p.get(name).unwrap().data()[i];
                p.get_mut(name).unwrap().data_mut()[i] = orig + O::lit(h);
                let up = loss(&p, config, &oracle_x, &labels, &oracle_targets, seed);
                p.get_mut(name).unwrap().data_mut()[i] = orig - O::lit(h);
                let down = loss(&p, config, &oracle_x, &labels, &oracle_targets, seed);
                let actual_h = ((orig + O::lit(h)) - (orig - O::lit(h))).as_f64() / 2.0;
                let numeric = (up - down) / (2.0 * actual_h);
                let e = super::rel_err(g.data()[i].as_f64(), numeric, 1e-4);
                if e > worst.0 {
                    worst = (e, format!("{name}[{i}] analytic {} numeric {numeric}", g.data()[i]));
                }
            }
        }
        worst
    }
}
