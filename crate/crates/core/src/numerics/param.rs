use super::{Gradients, Real, Tensor};

/// A named tensor with an accumulated gradient.
///
/// Frozen parameters (`trainable == false`) are never bound as gradient
/// leaves, never receive accumulated gradient, and are skipped by the
/// optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<F> {
    pub name: String,
    pub data: Tensor<F>,
    pub grad: Tensor<F>,
    pub trainable: bool,
}

impl<F: Real> Parameter<F> {
    pub fn new(name: impl Into<String>, data: Tensor<F>) -> Self {
        let grad = Tensor::zeros(data.shape());
        Self {
            name: name.into(),
            data,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, data: Tensor<F>) -> Self {
        let mut p = Self::new(name, data);
        p.trainable = false;
        p
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
        if !trainable {
            self.zero_grad();
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn cast<G: Real>(&self) -> Parameter<G> {
        Parameter {
            name: self.name.clone(),
            data: self.data.cast(),
            grad: self.grad.cast(),
            trainable: self.trainable,
        }
    }
}

/// Adds each named gradient into the matching trainable parameter.
pub fn accumulate_into<F: Real>(params: &mut [&mut Parameter<F>], grads: &Gradients<F>) {
    for p in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        if let Some(g) = grads.param(&p.name) {
            p.grad.add_assign(g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Graph;

    #[test]
    fn accumulate_skips_frozen() {
        let mut a = Parameter::new("a", Tensor::vector(vec![1.0f64, 2.0]));
        let mut b = Parameter::frozen("b", Tensor::vector(vec![3.0f64, 4.0]));
        let grads = {
            let a2 = Parameter::new("a", a.data.clone());
            let b2 = Parameter::new("b", b.data.clone());
            let mut g = Graph::new();
            let x = g.param(&a2);
            let y = g.param(&b2);
            let m = g.mul(x, y).unwrap();
            let s = g.sum(m);
            g.backward(s).unwrap()
        };
        accumulate_into(&mut [&mut a, &mut b], &grads);
        assert_eq!(a.grad.data(), &[3.0, 4.0]);
        assert_eq!(b.grad.data(), &[0.0, 0.0]);
    }
}
