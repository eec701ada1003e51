use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::error::{contract, invalid, Result};

/// ADAM hyper-parameters with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One ADAM update over every parameter in the store.
///
/// Decay shrinks the parameter (`p -= lr * wd * p`) before the moment
/// update and never enters the moment estimates.
pub fn adam_step<F: Real>(store: &mut ParamStore<F>, cfg: &AdamConfig) -> Result<()> {
    adam_step_where(store, cfg, |_| true)
}

/// [`adam_step`] restricted to parameters whose name satisfies `selected`.
/// Unselected parameters keep their values and moments, as if they had no
/// gradient this step.
pub fn adam_step_where<F: Real>(
    store: &mut ParamStore<F>,
    cfg: &AdamConfig,
    selected: impl Fn(&str) -> bool,
) -> Result<()> {
    if !store.grads_ready {
        return contract("adam_step called before gradients were computed");
    }
    if !(cfg.lr > 0.0) {
        return invalid(format!("learning rate must be positive, got {}", cfg.lr));
    }
    store.step += 1;
    let t = store.step.min(i32::MAX as u64) as i32;
    let lr = F::lit(cfg.lr);
    let b1 = F::lit(cfg.beta1);
    let b2 = F::lit(cfg.beta2);
    let eps = F::lit(cfg.eps);
    let shrink = F::one() - F::lit(cfg.lr * cfg.weight_decay);
    let bc1 = F::one() - b1.powi(t);
    let bc2 = F::one() - b2.powi(t);
    let ids: Vec<_> = store.ids().filter(|&id| selected(store.name(id))).collect();
    for id in ids {
        let (param, grad, m, v) = store.slots_mut(id);
        let it = param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((p, &g), (mi, vi)) in it {
            if cfg.weight_decay != 0.0 {
                *p *= shrink;
            }
            *mi = b1 * *mi + (F::one() - b1) * g;
            *vi = b2 * *vi + (F::one() - b2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.grads_ready = false;
    Ok(())
}

/// l2 norm of all gradients concatenated, accumulated in parameter order.
pub fn global_grad_norm<F: Real>(store: &ParamStore<F>) -> F {
    let mut total = F::zero();
    for id in store.ids() {
        total += store.grad(id).sq_norm();
    }
    total.sqrt()
}

/// Rescales every gradient by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the scale applied (1 when untouched).
pub fn clip_global_norm<F: Real>(store: &mut ParamStore<F>, max_norm: f64) -> Result<F> {
    if !(max_norm > 0.0) {
        return invalid(format!("max_norm must be positive, got {max_norm}"));
    }
    let norm = global_grad_norm(store);
    let max = F::lit(max_norm);
    if norm <= max {
        return Ok(F::one());
    }
    let scale = max / norm;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.grad_mut(id).data_mut().iter_mut().for_each(|g| *g *= scale);
    }
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn scalar_store(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(value)).unwrap();
        s.grad_mut(id).data_mut()[0] = grad;
        s.set_grads_ready();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0, 1.0);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        let p = s.value(s.id("p").unwrap()).data()[0];
        // m_hat = v_hat = 1 after bias correction
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((p - expected).abs() < 1e-15, "{p}");
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn zero_grad_leaves_param() {
        let mut s = scalar_store(0.7, 0.0);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(s.id("p").unwrap()).data()[0], 0.7);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut s = scalar_store(2.0, 0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &cfg).unwrap();
        assert!((s.value(s.id("p").unwrap()).data()[0] - 1.9).abs() < 1e-12);
        assert_eq!(s.first_moment[0].data()[0], 0.0);
    }

    #[test]
    fn unselected_params_untouched() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::scalar(1.0)).unwrap();
        let b = s.add("b", Tensor::scalar(1.0)).unwrap();
        s.grad_mut(a).data_mut()[0] = 1.0;
        s.grad_mut(b).data_mut()[0] = 1.0;
        s.set_grads_ready();
        adam_step_where(&mut s, &AdamConfig::default(), |n| n == "a").unwrap();
        assert!(s.value(a).data()[0] < 1.0);
        assert_eq!(s.value(b).data()[0], 1.0);
    }

    #[test]
    fn needs_gradients() {
        let mut s = ParamStore::<f64>::new();
        s.add("p", Tensor::scalar(1.0)).unwrap();
        assert!(adam_step(&mut s, &AdamConfig::default()).is_err());
    }

    #[test]
    fn clip_scales_to_max() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::row(&[0.0, 0.0])).unwrap();
        s.grad_mut(a).data_mut().copy_from_slice(&[12.0, 16.0]);
        assert_eq!(clip_global_norm(&mut s, 10.0).unwrap(), 0.5);
        assert_eq!(s.grad(a).data(), &[6.0, 8.0]);
        s.grad_mut(a).data_mut().copy_from_slice(&[0.0, 3.0]);
        assert_eq!(clip_global_norm(&mut s, 10.0).unwrap(), 1.0);
        assert_eq!(s.grad(a).data(), &[0.0, 3.0]);
    }
}
