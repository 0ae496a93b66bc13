//! Adam with per-parameter state keyed by parameter name.

use std::collections::BTreeMap;

use crate::numerics::{Parameter, Real, Tensor};

#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: BTreeMap<String, (Tensor<F>, Tensor<F>)>,
}

impl<F: Real> Adam<F> {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update to every trainable parameter, then clears all
    /// gradients. Frozen parameters are left untouched.
    pub fn step(&mut self, params: &mut [&mut Parameter<F>]) {
        self.step += 1;
        let b1 = F::lit(self.beta1);
        let b2 = F::lit(self.beta2);
        let one = F::one();
        let c1 = F::lit(1.0 - self.beta1.powi(self.step));
        let c2 = F::lit(1.0 - self.beta2.powi(self.step));
        let lr = F::lit(self.learning_rate);
        let eps = F::lit(self.eps);
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (Tensor::zeros(p.data.shape()), Tensor::zeros(p.data.shape())));
            let grad = p.grad.data();
            let data = p.data.data_mut();
            for (((x, &g), mi), vi) in data
                .iter_mut()
                .zip(grad)
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                let delta = lr * mhat / (vhat.sqrt() + eps);
                // Skipping zero steps keeps -0.0 entries bit-identical.
                if delta != F::zero() {
                    *x -= delta;
                }
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Parameter::new("x", Tensor::vector(vec![3.0f64, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.data.data().iter().map(|x| 2.0 * x).collect();
            p.grad = Tensor::vector(g);
            opt.step(&mut [&mut p]);
        }
        assert!(p.data.data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut p = Parameter::frozen("x", Tensor::vector(vec![1.0f32, 2.0]));
        p.grad = Tensor::vector(vec![5.0, 5.0]);
        let before = p.data.clone();
        Adam::new(0.1).step(&mut [&mut p]);
        assert!(p.data.bit_eq(&before));
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let mut p = Parameter::new("x", Tensor::vector(vec![1.5f32, -0.0, 7.25]));
        let before = p.data.clone();
        let mut opt = Adam::new(0.0);
        for _ in 0..3 {
            p.grad = Tensor::vector(vec![0.3, -1.0, 2.0]);
            opt.step(&mut [&mut p]);
        }
        assert!(p.data.bit_eq(&before));
    }
}
