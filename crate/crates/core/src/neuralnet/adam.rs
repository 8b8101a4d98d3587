use serde::{Deserialize, Serialize};

use super::network::Network;
use super::tensor::{Scalar, Tensor};
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { alpha: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Self {
        let zeros = || net.params().iter().map(|p| Tensor::zeros(p.tensor.dims())).collect::<Vec<_>>();
        AdamState { config, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, i: usize) -> (&Tensor<T>, &Tensor<T>) {
        (&self.m[i], &self.v[i])
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, net: &mut Network<T>, grads: &[Tensor<T>]) -> Result<(), NetError> {
        if grads.len() != self.m.len()
            || grads.iter().zip(&self.m).any(|(g, m)| g.dims() != m.dims())
            || net.params().len() != self.m.len()
        {
            return Err(NetError::ShapeMismatch("gradients do not match optimizer state".into()));
        }
        self.t += 1;
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            adam_update(
                &self.config,
                self.t,
                p.tensor.data_mut(),
                grads[i].data(),
                self.m[i].data_mut(),
                self.v[i].data_mut(),
            );
        }
        Ok(())
    }
}

/// Update rule for step `t` (1-based) on flat buffers.
pub fn adam_update<T: Scalar>(config: &AdamConfig, t: u64, theta: &mut [T], grad: &[T], m: &mut [T], v: &mut [T]) {
    let AdamConfig { alpha, beta1, beta2, eps } = *config;
    let c1 = T::of(1.0 - beta1.powi(t as i32));
    let c2 = T::of(1.0 - beta2.powi(t as i32));
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (ob1, ob2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let (step, eps) = (T::of(alpha), T::of(eps));
    for (((th, &g), mi), vi) in theta.iter_mut().zip(grad).zip(m).zip(v) {
        *mi = b1 * *mi + ob1 * g;
        *vi = b2 * *vi + ob2 * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *th -= step * m_hat / (v_hat.sqrt() + eps);
    }
}
