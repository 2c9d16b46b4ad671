use rand::Rng;

use super::{invalid, shape_err, KernelResult, LayerGrads, Mode};
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutOutput<S> {
    pub output: TensorOf<S>,
    /// Per-element multiplier actually applied: `0` or `1/(1 − rate)`.
    pub mask: Vec<S>,
}

/// Inverted dropout. Eval mode and `rate == 0` are the identity and draw
/// nothing from `rng`.
pub fn dropout<S: Scalar, R: Rng + ?Sized>(
    x: &TensorOf<S>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> KernelResult<DropoutOutput<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(DropoutOutput {
            output: x.clone(),
            mask: vec![S::one(); x.len()],
        });
    }
    let keep = S::lit(1.0 / (1.0 - rate));
    let mask: Vec<S> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { S::zero() } else { keep })
        .collect();
    let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok(DropoutOutput {
        output: TensorOf::new(x.shape().to_vec(), out).expect("same shape"),
        mask,
    })
}

pub fn dropout_backward<S: Scalar>(mask: &[S], grad_out: &TensorOf<S>) -> KernelResult<LayerGrads<S>> {
    if mask.len() != grad_out.len() {
        return Err(shape_err("dropout_backward", "mask length differs from upstream"));
    }
    let dx = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Ok(LayerGrads::input_only(
        TensorOf::new(grad_out.shape().to_vec(), dx).expect("same shape"),
    ))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_cases() {
        let x = TensorOf::<f32>::from_vec(vec![1.0, -2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap().output, x);
        assert_eq!(dropout(&x, 0.0, Mode::Eval, &mut rng).unwrap().output, x);
        assert_eq!(dropout(&x, 0.5, Mode::Eval, &mut rng).unwrap().output, x);
    }

    #[test]
    fn expectation_is_preserved() {
        let x = TensorOf::<f32>::full(&[100_000], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap().output;
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / 1e5;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn seeded_masks_repeat() {
        let x = TensorOf::<f32>::full(&[64], 1.0);
        let a = dropout(&x, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = dropout(&x, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rate_one_rejected() {
        let x = TensorOf::<f32>::full(&[4], 1.0);
        assert!(dropout(&x, 1.0, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
