use super::{batch_dims, finite, invalid, map_shape, shape_err, KernelResult, LayerGrads};
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

/// `floor((T + 2·padding − K) / stride) + 1`, or `None` when the kernel does
/// not fit in the padded signal.
pub fn conv1d_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Zero padding that keeps the length unchanged at stride 1.
pub fn same_padding(kernel: usize) -> usize {
    kernel / 2
}

fn out_len(op: &'static str, t: usize, k: usize, stride: usize, padding: usize) -> KernelResult<usize> {
    if stride == 0 {
        return Err(invalid(op, "stride must be positive"));
    }
    conv1d_output_len(t, k, stride, padding)
        .ok_or_else(|| invalid(op, format!("kernel {k} longer than padded length {}", t + 2 * padding)))
}

/// One filter per channel: `y[c, o] = Σ_k x[c, o·stride + k − padding] · w[c, k]`.
pub fn conv1d_depthwise<S: Scalar>(
    x: &TensorOf<S>,
    kernels: &TensorOf<S>,
    stride: usize,
    padding: usize,
) -> KernelResult<TensorOf<S>> {
    const OP: &str = "conv1d_depthwise";
    let (b, c, t) = batch_dims(OP, x)?;
    let k = match *kernels.shape() {
        [kc, k] if kc == c => k,
        ref s => return Err(shape_err(OP, format!("kernels {s:?} for {c} channels"))),
    };
    let t_out = out_len(OP, t, k, stride, padding)?;
    let xd = x.data();
    let wd = kernels.data();
    let mut out = vec![S::zero(); b * c * t_out];
    for bi in 0..b {
        for ci in 0..c {
            let xrow = &xd[(bi * c + ci) * t..][..t];
            let w = &wd[ci * k..][..k];
            let orow = &mut out[(bi * c + ci) * t_out..][..t_out];
            for (o, y) in orow.iter_mut().enumerate() {
                let start = (o * stride) as isize - padding as isize;
                let mut acc = S::zero();
                for (ki, &wv) in w.iter().enumerate() {
                    let i = start + ki as isize;
                    if i >= 0 && (i as usize) < t {
                        acc += xrow[i as usize] * wv;
                    }
                }
                *y = acc;
            }
        }
    }
    finite(
        OP,
        TensorOf::new(map_shape(x, b, c, t_out), out).expect("computed shape"),
    )
}

pub fn conv1d_depthwise_backward<S: Scalar>(
    x: &TensorOf<S>,
    kernels: &TensorOf<S>,
    stride: usize,
    padding: usize,
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    const OP: &str = "conv1d_depthwise_backward";
    let (b, c, t) = batch_dims(OP, x)?;
    let k = kernels
        .shape()
        .get(1)
        .copied()
        .ok_or_else(|| shape_err(OP, "kernels must be [C,K]"))?;
    let t_out = out_len(OP, t, k, stride, padding)?;
    if grad_out.shape() != map_shape(x, b, c, t_out).as_slice() {
        return Err(shape_err(
            OP,
            format!("upstream {:?} vs output [{b},{c},{t_out}]", grad_out.shape()),
        ));
    }
    let xd = x.data();
    let wd = kernels.data();
    let gd = grad_out.data();
    let mut dx = vec![S::zero(); xd.len()];
    let mut dw = vec![S::zero(); wd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * t;
            let grow = &gd[(bi * c + ci) * t_out..][..t_out];
            for (o, &g) in grow.iter().enumerate() {
                let start = (o * stride) as isize - padding as isize;
                for ki in 0..k {
                    let i = start + ki as isize;
                    if i >= 0 && (i as usize) < t {
                        let i = i as usize;
                        dx[base + i] += g * wd[ci * k + ki];
                        dw[ci * k + ki] += g * xd[base + i];
                    }
                }
            }
        }
    }
    Ok(
        LayerGrads::input_only(TensorOf::new(x.shape().to_vec(), dx).expect("input shape")).with(
            "kernels",
            TensorOf::new(kernels.shape().to_vec(), dw).expect("kernel shape"),
        ),
    )
}

/// 1×1 cross-channel mixing: `y[o, t] = Σ_i w[o, i] · x[i, t] (+ bias[o])`.
pub fn conv1d_pointwise<S: Scalar>(
    x: &TensorOf<S>,
    weights: &TensorOf<S>,
    bias: Option<&TensorOf<S>>,
) -> KernelResult<TensorOf<S>> {
    const OP: &str = "conv1d_pointwise";
    let (b, c_in, t) = batch_dims(OP, x)?;
    let c_out = match *weights.shape() {
        [o, i] if i == c_in => o,
        ref s => return Err(shape_err(OP, format!("weights {s:?} for {c_in} input channels"))),
    };
    if let Some(bias) = bias {
        if bias.shape() != [c_out] {
            return Err(shape_err(OP, format!("bias {:?} for {c_out} outputs", bias.shape())));
        }
    }
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![S::zero(); b * c_out * t];
    for bi in 0..b {
        let xb = &xd[bi * c_in * t..][..c_in * t];
        for o in 0..c_out {
            let orow = &mut out[(bi * c_out + o) * t..][..t];
            if let Some(bias) = bias {
                orow.fill(bias.data()[o]);
            }
            for i in 0..c_in {
                let w = wd[o * c_in + i];
                let xrow = &xb[i * t..][..t];
                for (y, &xv) in orow.iter_mut().zip(xrow) {
                    *y += w * xv;
                }
            }
        }
    }
    finite(
        OP,
        TensorOf::new(map_shape(x, b, c_out, t), out).expect("computed shape"),
    )
}

/// Gradients for [`conv1d_pointwise`]; a `"bias"` entry is produced only when
/// `has_bias` is set.
pub fn conv1d_pointwise_backward<S: Scalar>(
    x: &TensorOf<S>,
    weights: &TensorOf<S>,
    has_bias: bool,
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    const OP: &str = "conv1d_pointwise_backward";
    let (b, c_in, t) = batch_dims(OP, x)?;
    let c_out = weights.shape()[0];
    if weights.shape() != [c_out, c_in] || grad_out.shape() != map_shape(x, b, c_out, t).as_slice() {
        return Err(shape_err(
            OP,
            format!("upstream {:?} / weights {:?}", grad_out.shape(), weights.shape()),
        ));
    }
    let xd = x.data();
    let wd = weights.data();
    let gd = grad_out.data();
    let mut dx = vec![S::zero(); xd.len()];
    let mut dw = vec![S::zero(); wd.len()];
    let mut db = vec![S::zero(); c_out];
    for bi in 0..b {
        let xb = &xd[bi * c_in * t..][..c_in * t];
        let dxb = &mut dx[bi * c_in * t..][..c_in * t];
        for o in 0..c_out {
            let grow = &gd[(bi * c_out + o) * t..][..t];
            db[o] += grow.iter().copied().sum::<S>();
            for i in 0..c_in {
                let xrow = &xb[i * t..][..t];
                let mut acc = S::zero();
                for (&g, &xv) in grow.iter().zip(xrow) {
                    acc += g * xv;
                }
                dw[o * c_in + i] += acc;
                let w = wd[o * c_in + i];
                for (d, &g) in dxb[i * t..][..t].iter_mut().zip(grow) {
                    *d += w * g;
                }
            }
        }
    }
    let grads = LayerGrads::input_only(TensorOf::new(x.shape().to_vec(), dx).expect("input shape")).with(
        "weight",
        TensorOf::new(weights.shape().to_vec(), dw).expect("weight shape"),
    );
    Ok(if has_bias {
        grads.with("bias", TensorOf::from_vec(db))
    } else {
        grads
    })
}

/// Dense 1-D convolution with weights `[C_out, C_in, K]`.
pub fn conv1d<S: Scalar>(
    x: &TensorOf<S>,
    weights: &TensorOf<S>,
    bias: Option<&TensorOf<S>>,
    stride: usize,
    padding: usize,
) -> KernelResult<TensorOf<S>> {
    const OP: &str = "conv1d";
    let (b, c_in, t) = batch_dims(OP, x)?;
    let (c_out, k) = match *weights.shape() {
        [o, i, k] if i == c_in => (o, k),
        ref s => return Err(shape_err(OP, format!("weights {s:?} for {c_in} input channels"))),
    };
    if let Some(bias) = bias {
        if bias.shape() != [c_out] {
            return Err(shape_err(OP, format!("bias {:?} for {c_out} outputs", bias.shape())));
        }
    }
    let t_out = out_len(OP, t, k, stride, padding)?;
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![S::zero(); b * c_out * t_out];
    for bi in 0..b {
        for o in 0..c_out {
            let orow = &mut out[(bi * c_out + o) * t_out..][..t_out];
            if let Some(bias) = bias {
                orow.fill(bias.data()[o]);
            }
            for i in 0..c_in {
                let xrow = &xd[(bi * c_in + i) * t..][..t];
                let w = &wd[(o * c_in + i) * k..][..k];
                for (oi, y) in orow.iter_mut().enumerate() {
                    let start = (oi * stride) as isize - padding as isize;
                    let mut acc = S::zero();
                    for (ki, &wv) in w.iter().enumerate() {
                        let p = start + ki as isize;
                        if p >= 0 && (p as usize) < t {
                            acc += xrow[p as usize] * wv;
                        }
                    }
                    *y += acc;
                }
            }
        }
    }
    finite(
        OP,
        TensorOf::new(map_shape(x, b, c_out, t_out), out).expect("computed shape"),
    )
}

pub fn conv1d_backward<S: Scalar>(
    x: &TensorOf<S>,
    weights: &TensorOf<S>,
    has_bias: bool,
    stride: usize,
    padding: usize,
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    const OP: &str = "conv1d_backward";
    let (b, c_in, t) = batch_dims(OP, x)?;
    let (c_out, k) = match *weights.shape() {
        [o, i, k] if i == c_in => (o, k),
        ref s => return Err(shape_err(OP, format!("weights {s:?} for {c_in} input channels"))),
    };
    let t_out = out_len(OP, t, k, stride, padding)?;
    if grad_out.shape() != map_shape(x, b, c_out, t_out).as_slice() {
        return Err(shape_err(OP, format!("upstream {:?}", grad_out.shape())));
    }
    let xd = x.data();
    let wd = weights.data();
    let gd = grad_out.data();
    let mut dx = vec![S::zero(); xd.len()];
    let mut dw = vec![S::zero(); wd.len()];
    let mut db = vec![S::zero(); c_out];
    for bi in 0..b {
        for o in 0..c_out {
            let grow = &gd[(bi * c_out + o) * t_out..][..t_out];
            db[o] += grow.iter().copied().sum::<S>();
            for i in 0..c_in {
                let xbase = (bi * c_in + i) * t;
                let wbase = (o * c_in + i) * k;
                for (oi, &g) in grow.iter().enumerate() {
                    let start = (oi * stride) as isize - padding as isize;
                    for ki in 0..k {
                        let p = start + ki as isize;
                        if p >= 0 && (p as usize) < t {
                            let p = p as usize;
                            dx[xbase + p] += g * wd[wbase + ki];
                            dw[wbase + ki] += g * xd[xbase + p];
                        }
                    }
                }
            }
        }
    }
    let grads = LayerGrads::input_only(TensorOf::new(x.shape().to_vec(), dx).expect("input shape")).with(
        "weight",
        TensorOf::new(weights.shape().to_vec(), dw).expect("weight shape"),
    );
    Ok(if has_bias {
        grads.with("bias", TensorOf::from_vec(db))
    } else {
        grads
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[Vec<f64>]) -> TensorOf<f64> {
        TensorOf::from_rows(rows)
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = t2(&[vec![1.0, -2.0, 3.5, 0.25], vec![4.0, 5.0, -6.0, 7.0]]);
        let k = t2(&[vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(conv1d_depthwise(&x, &k, 1, 1).unwrap(), x);
    }

    #[test]
    fn depthwise_box_filter() {
        let x = t2(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let k = t2(&[vec![1.0, 1.0, 1.0]]);
        assert_eq!(conv1d_depthwise(&x, &k, 1, 1).unwrap().data(), &[3.0, 6.0, 9.0, 7.0]);
        assert_eq!(conv1d_depthwise(&x, &k, 2, 1).unwrap().data(), &[3.0, 9.0]);
    }

    #[test]
    fn depthwise_rejects_bad_shapes() {
        let x = t2(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let two_channel = t2(&[vec![1.0; 3], vec![1.0; 3]]);
        assert!(matches!(
            conv1d_depthwise(&x, &two_channel, 1, 1),
            Err(crate::nn::KernelError::Shape { .. })
        ));
        let long = t2(&[vec![1.0; 7]]);
        assert!(matches!(
            conv1d_depthwise(&x, &long, 1, 1),
            Err(crate::nn::KernelError::InvalidArgument { .. })
        ));
    }

    #[test]
    fn pointwise_examples() {
        let x = t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let eye = t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(conv1d_pointwise(&x, &eye, Some(&TensorOf::zeros(&[2]))).unwrap(), x);
        let sum = t2(&[vec![1.0, 1.0]]);
        assert_eq!(conv1d_pointwise(&x, &sum, None).unwrap().data(), &[4.0, 6.0]);
        let zero = t2(&[vec![0.0, 0.0]]);
        let out = conv1d_pointwise(&x, &zero, Some(&TensorOf::from_vec(vec![2.5]))).unwrap();
        assert_eq!(out.data(), &[2.5, 2.5]);
    }

    #[test]
    fn pointwise_rejects_channel_mismatch() {
        let x = t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(conv1d_pointwise(&x, &t2(&[vec![1.0, 1.0, 1.0]]), None).is_err());
    }

    #[test]
    fn dense_conv_with_one_input_matches_depthwise() {
        let x = t2(&[vec![0.5, -1.0, 2.0, 3.0, 1.0]]);
        let k = t2(&[vec![0.2, -0.4, 0.6]]);
        let dense = TensorOf::new(vec![1, 1, 3], k.data().to_vec()).unwrap();
        assert_eq!(
            conv1d(&x, &dense, None, 2, 1).unwrap(),
            conv1d_depthwise(&x, &k, 2, 1).unwrap()
        );
    }

    #[test]
    fn output_len_formula() {
        assert_eq!(conv1d_output_len(128, 5, 2, 2), Some(64));
        assert_eq!(conv1d_output_len(4, 3, 1, 1), Some(4));
        assert_eq!(conv1d_output_len(2, 7, 1, 1), None);
        assert_eq!(same_padding(5), 2);
    }
}
