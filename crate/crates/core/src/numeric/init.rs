use super::{dropout_mask, Real, RngState, Tensor};
use crate::error::{invalid, Result};

/// Glorot uniform matrix of shape `(fan_out, fan_in)`, entries drawn from
/// `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<F: Real>(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Result<Tensor<F>> {
    if fan_in == 0 || fan_out == 0 {
        return invalid(format!("glorot fans must be positive, got ({fan_in}, {fan_out})"));
    }
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| F::lit(rng.uniform_in(-bound, bound)))
        .collect();
    Tensor::matrix(fan_out, fan_in, data)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Inverted dropout on a standalone tensor. Identity in eval mode.
pub fn dropout<F: Real>(x: &Tensor<F>, p: f64, training: bool, rng: &mut RngState) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&p) {
        return invalid(format!("dropout probability {p} outside [0, 1)"));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mask: Tensor<F> = dropout_mask(x.shape(), p, rng);
    let data = x.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_values() {
        assert_eq!(glorot_bound(3, 3), 1.0);
        assert!((glorot_bound(1, 2) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn samples_inside_bound() {
        let mut rng = RngState::new(11);
        let w: Tensor<f64> = glorot_uniform(3, 3, &mut rng).unwrap();
        assert_eq!(w.shape(), &[3, 3]);
        assert!(w.data().iter().all(|v| v.abs() <= 1.0));
        let w: Tensor<f64> = glorot_uniform(1, 2, &mut rng).unwrap();
        assert_eq!(w.shape(), &[2, 1]);
    }

    #[test]
    fn zero_fan_rejected() {
        let mut rng = RngState::new(0);
        assert!(glorot_uniform::<f32>(0, 3, &mut rng).is_err());
        assert!(glorot_uniform::<f32>(3, 0, &mut rng).is_err());
    }

    #[test]
    fn empirical_mean_near_zero() {
        let mut rng = RngState::new(5);
        let w: Tensor<f64> = glorot_uniform(200, 500, &mut rng).unwrap();
        let b = glorot_bound(200, 500);
        let mean = w.sum() / w.len() as f64;
        assert!(mean.abs() < 0.01 * b, "mean {mean}");
    }

    #[test]
    fn dropout_modes() {
        let mut rng = RngState::new(1);
        let x = Tensor::full(&[1, 100_000], 1.0f64);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
