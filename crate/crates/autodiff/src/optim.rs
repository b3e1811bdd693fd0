//! First-order optimizers over lists of parameter tensors.
//!
//! Parameters whose gradient is `None` for a step are left untouched,
//! including their moment estimates.

use crate::{Float, Tensor};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    /// Number of completed updates.
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Float> Adam<F> {
    pub fn new(lr: F, beta1: F, beta2: F, eps: F) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    fn ensure_state(&mut self, params: &[Tensor<F>]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Option<Tensor<F>>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        self.ensure_state(params);
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (one - self.beta1) * gv;
                *vv = self.beta2 * *vv + (one - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// SGD with heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Sgd<F> {
    pub lr: F,
    pub momentum: F,
    pub velocity: Vec<Tensor<F>>,
}

impl<F: Float> Sgd<F> {
    pub fn new(lr: F, momentum: F) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Option<Tensor<F>>]) {
        assert_eq!(params.len(), grads.len(), "one gradient slot per parameter");
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            for ((pv, &gv), vel) in p.data_mut().iter_mut().zip(g.data()).zip(self.velocity[i].data_mut()) {
                *vel = self.momentum * *vel + gv;
                *pv -= self.lr * *vel;
            }
        }
    }
}
