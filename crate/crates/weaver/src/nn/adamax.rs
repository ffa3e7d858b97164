//! Adamax: the infinity-norm variant of Adam. Per coordinate,
//!
//!   m ← β1·m + (1−β1)·g
//!   u ← max(β2·u, |g|)
//!   θ ← θ − (α / (1 − β1ᵗ)) · m / (u + ε)
//!
//! Moment buffers are allocated on the first step and keyed by parameter
//! order, which therefore must not change between steps.

use super::ParamGroup;
use crate::tensor::{Real, Tensor};

pub struct Adamax<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    step_count: u64,
    m: Vec<Vec<F>>,
    u: Vec<Vec<F>>,
}

impl<F: Real> Adamax<F> {
    /// Defaults follow the standard setting: β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(lr: f64) -> Self {
        Adamax {
            lr: F::from_f64(lr),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            step_count: 0,
            m: Vec::new(),
            u: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update. `params` and `grads` must be aligned and keep the
    /// same order and shapes across every call.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>]) {
        assert_eq!(
            params.len(),
            grads.len(),
            "adamax: {} params vs {} grads",
            params.len(),
            grads.len()
        );
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
            self.u = params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "adamax: parameter count changed");
        self.step_count += 1;
        let alpha = self.alpha();
        for ((param, grad), (m, u)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.u.iter_mut()))
        {
            Self::update_tensor(self.beta1, self.beta2, self.eps, alpha, param, grad, m, u);
        }
    }

    /// Apply one update by walking a parameter group, with `grads`
    /// aligned to the group's visiting order. State is keyed by position,
    /// so the group's structure must stay fixed across calls.
    pub fn step_group(&mut self, group: &mut dyn ParamGroup<F>, grads: &[Tensor<F>]) {
        if self.m.is_empty() {
            group.for_each("", &mut |_, t| {
                self.m.push(vec![F::zero(); t.numel()]);
                self.u.push(vec![F::zero(); t.numel()]);
            });
        }
        assert_eq!(self.m.len(), grads.len(), "adamax: {} params vs {} grads", self.m.len(), grads.len());
        self.step_count += 1;
        let alpha = self.alpha();
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let (m_all, u_all) = (&mut self.m, &mut self.u);
        let mut idx = 0usize;
        group.for_each_mut("", &mut |name, param| {
            assert!(idx < grads.len(), "adamax: more params than grads at {name:?}");
            Self::update_tensor(
                beta1,
                beta2,
                eps,
                alpha,
                param,
                &grads[idx],
                &mut m_all[idx],
                &mut u_all[idx],
            );
            idx += 1;
        });
        assert_eq!(idx, grads.len(), "adamax: parameter count changed");
    }

    fn alpha(&self) -> F {
        let correction = F::one() - self.beta1.powi(self.step_count as i32);
        self.lr / correction
    }

    #[allow(clippy::too_many_arguments)]
    fn update_tensor(
        beta1: F,
        beta2: F,
        eps: F,
        alpha: F,
        param: &mut Tensor<F>,
        grad: &Tensor<F>,
        m: &mut [F],
        u: &mut [F],
    ) {
        assert_eq!(
            param.shape(),
            grad.shape(),
            "adamax: param shape {:?} vs grad shape {:?}",
            param.shape(),
            grad.shape()
        );
        let one = F::one();
        let g = grad.data();
        let p = param.data_mut();
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (one - beta1) * g[i];
            let decayed = beta2 * u[i];
            let mag = g[i].abs();
            u[i] = if decayed > mag { decayed } else { mag };
            p[i] -= alpha * m[i] / (u[i] + eps);
        }
    }
}
