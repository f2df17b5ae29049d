//! Adam and global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{ParamId, ParamSet, Tensor};
use alloc::vec::Vec;

/// First/second moment accumulators for every tensor of one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates refused because a gradient was not finite.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.value.rows(), t.value.cols())).collect();
        AdamState { beta1: 0.9, beta2: 0.999, eps, step: 0, m: zeros(), v: zeros(), skipped: 0 }
    }

    /// One bias-corrected Adam update using the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        self.step_with(params, |_| lr)
    }

    /// Like [`AdamState::step`] with a per-tensor learning rate.
    pub fn step_with(&mut self, params: &mut ParamSet, lr_for: impl Fn(ParamId) -> f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::internal("Adam state does not match parameter set"));
        }
        if params.iter().any(|(_, t)| !t.grad.is_finite()) {
            self.skipped += 1;
            return Err(Error::numeric("non-finite gradient, Adam update skipped"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(self.beta1, t);
        let bc2 = 1.0 - math::powi(self.beta2, t);
        let bc2_sqrt = math::sqrt(bc2);
        for (i, p) in params.iter_mut().enumerate() {
            let lr = lr_for(ParamId(i));
            let step_size = lr / bc1;
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let denom = math::sqrt(*vi) / bc2_sqrt + self.eps;
                *w -= step_size * *mi / denom;
            }
        }
        Ok(())
    }
}

/// Scales every stored gradient by `max_norm / norm` when the global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = params.grad_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, SeedTree};

    fn one(value: &[f64]) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::row_vector(value));
        (ps, id)
    }

    #[test]
    fn zero_gradient_is_identity() {
        let (mut ps, id) = one(&[0.5, -1.25, 3.0]);
        let before = ps.value(id).clone();
        let mut adam = AdamState::new(&ps, 1e-5);
        for _ in 0..100 {
            adam.step(&mut ps, 3e-4).unwrap();
        }
        assert_eq!(ps.value(id), &before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut ps, id) = one(&[0.0, 0.0, 0.0]);
        ps.get_mut(id).grad = Tensor::row_vector(&[2.5, -0.01, 40.0]);
        let mut adam = AdamState::new(&ps, 1e-5);
        adam.step(&mut ps, 3e-4).unwrap();
        for (w, g) in ps.value(id).data().iter().zip([2.5, -0.01, 40.0]) {
            let want = -3e-4 * g / (libm::fabs(g) + 1e-5);
            assert!((w - want).abs() < 1e-15);
            assert!((w.abs() - 3e-4).abs() < 3e-4 * 1e-3);
        }
    }

    #[test]
    fn three_steps_match_scalar_recurrence() {
        let grads = [[0.3, -1.0], [0.1, 2.0], [-0.7, 0.5]];
        let (mut ps, id) = one(&[1.0, -2.0]);
        let mut adam = AdamState::new(&ps, 1e-5);
        for g in &grads {
            ps.get_mut(id).grad = Tensor::row_vector(g);
            adam.step(&mut ps, 1e-2).unwrap();
        }
        // scalar oracle, textbook form with explicit bias-corrected moments
        for k in 0..2 {
            let (mut w, mut m, mut v) = ([1.0, -2.0][k], 0.0, 0.0);
            for (t, g) in grads.iter().enumerate() {
                let t = (t + 1) as f64;
                m = 0.9 * m + 0.1 * g[k];
                v = 0.999 * v + 0.001 * g[k] * g[k];
                let mhat = m / (1.0 - libm::pow(0.9, t));
                let vhat = v / (1.0 - libm::pow(0.999, t));
                w -= 1e-2 * mhat / (libm::sqrt(vhat) + 1e-5);
            }
            assert!((ps.value(id).data()[k] - w).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn non_finite_gradient_skips_update() {
        let (mut ps, id) = one(&[1.0]);
        ps.get_mut(id).grad = Tensor::row_vector(&[f64::NAN]);
        let mut adam = AdamState::new(&ps, 1e-5);
        assert!(matches!(adam.step(&mut ps, 0.1), Err(Error::Numeric(_))));
        assert_eq!(ps.value(id).data(), &[1.0]);
        assert_eq!((adam.step, adam.skipped), (0, 1));
    }

    #[test]
    fn clip_leaves_small_norm_alone() {
        let (mut ps, id) = one(&[0.0, 0.0]);
        ps.get_mut(id).grad = Tensor::row_vector(&[0.06, 0.08]);
        let n = clip_global_norm(&mut ps, 0.5);
        assert!((n - 0.1).abs() < 1e-15);
        assert_eq!(ps.get(id).grad.data(), &[0.06, 0.08]);
    }

    #[test]
    fn clip_three_four_five() {
        let (mut ps, id) = one(&[0.0, 0.0]);
        ps.get_mut(id).grad = Tensor::row_vector(&[3.0, 4.0]);
        clip_global_norm(&mut ps, 0.5);
        let g = ps.get(id).grad.data();
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        assert!((ps.grad_norm() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clip_result_norm_is_min_of_norm_and_max() {
        let mut rng = SeedTree::new(4).stream("clip");
        for _ in 0..200 {
            let mut ps = ParamSet::new();
            let scale = libm::exp(2.0 * normal(&mut rng));
            for k in 0..3 {
                let id = ps.add(alloc::format!("t{k}"), Tensor::zeros(2, 3));
                let g: Vec<f64> = (0..6).map(|_| scale * normal(&mut rng)).collect();
                ps.get_mut(id).grad = Tensor::from_vec(2, 3, g).unwrap();
            }
            let pre = libm::sqrt(ps.iter().map(|(_, t)| t.grad.data().iter().map(|g| g * g).sum::<f64>()).sum());
            clip_global_norm(&mut ps, 0.5);
            assert!((ps.grad_norm() - pre.min(0.5)).abs() < 1e-12);
        }
    }
}
