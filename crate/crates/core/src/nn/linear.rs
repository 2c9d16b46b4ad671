use super::{batch_dims, finite, invalid, shape_err, KernelResult, LayerGrads};
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

/// Mean over time: `[C, T] → [C]`, `[B, C, T] → [B, C]`. Accumulates in `f64`.
pub fn global_avg_pool<S: Scalar>(x: &TensorOf<S>) -> KernelResult<TensorOf<S>> {
    const OP: &str = "global_avg_pool";
    let (b, c, t) = batch_dims(OP, x)?;
    if t == 0 {
        return Err(invalid(OP, "time extent is zero"));
    }
    let out: Vec<S> = x
        .data()
        .chunks_exact(t)
        .map(|row| S::lit(row.iter().map(|v| v.as_f64()).sum::<f64>() / t as f64))
        .collect();
    let shape = if x.rank() == 2 { vec![c] } else { vec![b, c] };
    finite(OP, TensorOf::new(shape, out).expect("pooled shape"))
}

pub fn global_avg_pool_backward<S: Scalar>(
    input_shape: &[usize],
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    const OP: &str = "global_avg_pool_backward";
    let t = *input_shape.last().ok_or_else(|| shape_err(OP, "empty input shape"))?;
    if t == 0 || grad_out.len() * t != input_shape.iter().product::<usize>() {
        return Err(shape_err(
            OP,
            format!("upstream {:?} for input {input_shape:?}", grad_out.shape()),
        ));
    }
    let inv = S::one() / S::of_usize(t);
    let dx = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, t))
        .collect();
    Ok(LayerGrads::input_only(
        TensorOf::new(input_shape.to_vec(), dx).expect("input shape"),
    ))
}

fn fc_dims<S: Scalar>(op: &'static str, x: &TensorOf<S>, w: &TensorOf<S>) -> KernelResult<(usize, usize, usize)> {
    let (b, d_in) = match *x.shape() {
        [d] => (1, d),
        [b, d] => (b, d),
        ref s => return Err(shape_err(op, format!("input {s:?} must be [D] or [B,D]"))),
    };
    match *w.shape() {
        [o, i] if i == d_in => Ok((b, d_in, o)),
        ref s => Err(shape_err(op, format!("weight {s:?} for input dim {d_in}"))),
    }
}

/// `Wx + b` for `x: [D_in]` or a batch `[B, D_in]`.
pub fn fully_connected<S: Scalar>(x: &TensorOf<S>, w: &TensorOf<S>, b: &TensorOf<S>) -> KernelResult<TensorOf<S>> {
    const OP: &str = "fully_connected";
    let (batch, d_in, d_out) = fc_dims(OP, x, w)?;
    if b.shape() != [d_out] {
        return Err(shape_err(OP, format!("bias {:?} for {d_out} outputs", b.shape())));
    }
    let mut out = Vec::with_capacity(batch * d_out);
    for xr in x.data().chunks_exact(d_in) {
        for (wr, &bias) in w.data().chunks_exact(d_in).zip(b.data()) {
            out.push(wr.iter().zip(xr).fold(bias, |acc, (&wv, &xv)| acc + wv * xv));
        }
    }
    let shape = if x.rank() == 1 { vec![d_out] } else { vec![batch, d_out] };
    finite(OP, TensorOf::new(shape, out).expect("fc shape"))
}

pub fn fully_connected_backward<S: Scalar>(
    x: &TensorOf<S>,
    w: &TensorOf<S>,
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    const OP: &str = "fully_connected_backward";
    let (batch, d_in, d_out) = fc_dims(OP, x, w)?;
    if grad_out.len() != batch * d_out {
        return Err(shape_err(OP, format!("upstream {:?}", grad_out.shape())));
    }
    let mut dx = vec![S::zero(); x.len()];
    let mut dw = vec![S::zero(); w.len()];
    let mut db = vec![S::zero(); d_out];
    for ((xr, gr), dxr) in x
        .data()
        .chunks_exact(d_in)
        .zip(grad_out.data().chunks_exact(d_out))
        .zip(dx.chunks_exact_mut(d_in))
    {
        for (o, &g) in gr.iter().enumerate() {
            db[o] += g;
            let wr = &w.data()[o * d_in..][..d_in];
            let dwr = &mut dw[o * d_in..][..d_in];
            for i in 0..d_in {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    Ok(
        LayerGrads::input_only(TensorOf::new(x.shape().to_vec(), dx).expect("input shape"))
            .with("weight", TensorOf::new(w.shape().to_vec(), dw).expect("weight shape"))
            .with("bias", TensorOf::from_vec(db)),
    )
}

/// Row-wise softmax with max subtraction; rank 1 or `[B, C]`.
pub fn softmax<S: Scalar>(logits: &TensorOf<S>) -> KernelResult<TensorOf<S>> {
    const OP: &str = "softmax";
    let c = match *logits.shape() {
        [c] | [_, c] if c >= 1 => c,
        ref s => return Err(shape_err(OP, format!("logits {s:?}"))),
    };
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += v.as_f64();
        }
        let inv = S::lit(1.0 / sum);
        row.iter_mut().for_each(|v| *v *= inv);
    }
    finite(OP, TensorOf::new(logits.shape().to_vec(), out).expect("same shape"))
}

/// Backward from the cached softmax output: `dx = p ⊙ (g − Σ g·p)` per row.
pub fn softmax_backward<S: Scalar>(probs: &TensorOf<S>, grad_out: &TensorOf<S>) -> KernelResult<LayerGrads<S>> {
    if probs.shape() != grad_out.shape() || probs.is_empty() {
        return Err(shape_err("softmax_backward", "upstream does not match cached output"));
    }
    let c = *probs.shape().last().unwrap();
    let mut dx = vec![S::zero(); probs.len()];
    for ((p, g), d) in probs
        .data()
        .chunks_exact(c)
        .zip(grad_out.data().chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        let dot = p.iter().zip(g).fold(S::zero(), |a, (&pv, &gv)| a + pv * gv);
        for i in 0..c {
            d[i] = p[i] * (g[i] - dot);
        }
    }
    Ok(LayerGrads::input_only(
        TensorOf::new(probs.shape().to_vec(), dx).expect("same shape"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        let x = TensorOf::<f64>::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![5.0; 4]]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5, 5.0]);
        for t in 1..20 {
            let y = global_avg_pool(&TensorOf::<f32>::zeros(&[3, t])).unwrap();
            assert_eq!(y.shape(), &[3]);
        }
        assert!(global_avg_pool(&TensorOf::<f32>::zeros(&[3, 0])).is_err());
    }

    #[test]
    fn fc_examples() {
        let x = TensorOf::<f64>::from_vec(vec![1.0, 2.0]);
        let w = TensorOf::from_rows(&[vec![3.0, 4.0]]);
        let b = TensorOf::from_vec(vec![1.0]);
        assert_eq!(fully_connected(&x, &w, &b).unwrap().data(), &[12.0]);
        let eye = TensorOf::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(fully_connected(&x, &eye, &TensorOf::zeros(&[2])).unwrap(), x);
        let bias = TensorOf::from_vec(vec![0.5, -0.5]);
        assert_eq!(fully_connected(&TensorOf::zeros(&[2]), &eye, &bias).unwrap(), bias);
        assert!(fully_connected(&TensorOf::from_vec(vec![1.0; 3]), &w, &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&TensorOf::<f64>::from_vec(vec![0.7; 4])).unwrap();
        assert!(u.data().iter().all(|&p| (p - 0.25).abs() < 1e-12));
        let p = softmax(&TensorOf::<f64>::from_vec(vec![0.0, 2f64.ln()])).unwrap();
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-6 && (p.data()[1] - 2.0 / 3.0).abs() < 1e-6);
        let big = softmax(&TensorOf::<f32>::from_vec(vec![1000.0, 999.0, -1000.0])).unwrap();
        assert!(big.is_finite());
        assert!((big.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fc_identity_backward_passes_upstream() {
        let x = TensorOf::<f64>::from_vec(vec![0.3, -0.2]);
        let eye = TensorOf::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = TensorOf::from_vec(vec![1.5, -2.0]);
        assert_eq!(fully_connected_backward(&x, &eye, &g).unwrap().input_grad, g);
    }
}
