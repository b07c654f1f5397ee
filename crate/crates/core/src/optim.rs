//! SGD with Nesterov momentum.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::params::{Group, ParameterStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocities: Vec<Tensor>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(store: &ParameterStore, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            bail!(InvalidArgument, "learning rate must be positive, got {learning_rate}");
        }
        if !(0.0..1.0).contains(&momentum) {
            bail!(InvalidArgument, "momentum must lie in [0, 1), got {momentum}");
        }
        let velocities = store.params().iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Ok(Self { velocities, learning_rate, momentum })
    }
}

/// `v ← m·v − lr·g;  θ ← θ + m·v − lr·g`, then zeroes every gradient.
pub fn sgd_nesterov_step(store: &mut ParameterStore, opt: &mut OptimizerState) -> Result<()> {
    if opt.velocities.len() != store.len() {
        bail!(DimensionMismatch, "{} velocity slots for {} parameters", opt.velocities.len(), store.len());
    }
    let (lr, m) = (opt.learning_rate, opt.momentum);
    for (id, vel) in store.ids().zip(opt.velocities.iter_mut()) {
        let grad = store.grad(id).clone();
        if !vel.same_shape(&grad) {
            bail!(DimensionMismatch, "velocity shape for {}", store.param(id).name);
        }
        let value = store.value_mut(id);
        for ((v, g), theta) in vel.data_mut().iter_mut().zip(grad.data()).zip(value.data_mut()) {
            *v = m * *v - lr * g;
            *theta += m * *v - lr * g;
        }
    }
    store.zero_grads();
    Ok(())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}

/// Clips each parameter group to L2 norm `max_norm` on its own, so one
/// component's large gradients do not shrink the others' updates.
/// Returns the global norm before clipping.
pub fn clip_grad_norm_per_group(store: &mut ParameterStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 {
        for group in Group::ALL {
            let n = store.group_grad_norm(group);
            if n > max_norm {
                store.scale_group_grads(group, max_norm / n);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Group, Init};
    use rand::SeedableRng;

    fn scalar_store(theta: f64) -> ParameterStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::new();
        s.register("theta", Group::Lm, 1, 1, Init::Const(theta), &mut rng).unwrap();
        s
    }

    #[test]
    fn per_group_clipping_leaves_small_groups_alone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::new();
        let a = s.register("a", Group::Encoder, 1, 2, Init::Zeros, &mut rng).unwrap();
        let b = s.register("b", Group::TdVae, 1, 1, Init::Zeros, &mut rng).unwrap();
        let mut g = crate::params::Gradients::new(2);
        g.add(a, &Tensor::from_vec(1, 2, vec![0.3, 0.4]).unwrap());
        g.add(b, &Tensor::from_vec(1, 1, vec![-400.0]).unwrap());
        s.accumulate(&g);
        let before = clip_grad_norm_per_group(&mut s, 5.0);
        assert!((before - (0.25f64 + 160000.0).sqrt()).abs() < 1e-9);
        assert_eq!(s.grad(a).data(), &[0.3, 0.4]);
        assert_eq!(s.grad(b).data(), &[-5.0]);
        assert_eq!(clip_grad_norm_per_group(&mut s, 0.0), (0.25f64 + 25.0).sqrt());
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(1.5);
        let mut opt = OptimizerState::new(&s, 0.01, 0.9).unwrap();
        sgd_nesterov_step(&mut s, &mut opt).unwrap();
        assert_eq!(s.params()[0].value.item(), 1.5);
    }

    #[test]
    fn hand_stepped_update() {
        let mut s = scalar_store(1.0);
        let id = s.id("theta").unwrap();
        let mut opt = OptimizerState::new(&s, 0.01, 0.9).unwrap();
        let mut g = crate::params::Gradients::new(1);
        g.add(id, &Tensor::scalar(1.0));
        s.accumulate(&g);
        sgd_nesterov_step(&mut s, &mut opt).unwrap();
        assert!((opt.velocities[0].item() - -0.01).abs() < 1e-15);
        assert!((s.value(id).item() - 0.981).abs() < 1e-12);
        assert_eq!(s.grad(id).item(), 0.0);
    }

    #[test]
    fn rejects_bad_hyperparameters_and_missing_slots() {
        let mut s = scalar_store(0.0);
        assert!(OptimizerState::new(&s, 0.0, 0.9).is_err());
        assert!(OptimizerState::new(&s, 0.1, 1.0).is_err());
        let mut opt = OptimizerState::new(&s, 0.1, 0.5).unwrap();
        opt.velocities.clear();
        assert!(sgd_nesterov_step(&mut s, &mut opt).is_err());
    }
}
