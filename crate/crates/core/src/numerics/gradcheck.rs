//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gradients, Parameter};
use crate::error::{Error, Result};

/// A deterministic scalar loss over a set of `f64` parameters.
pub trait LossFn {
    fn params_mut(&mut self) -> Vec<&mut Parameter<f64>>;

    /// Loss value and analytic gradients at the current parameter values.
    fn eval(&self) -> Result<(f64, Gradients<f64>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients with `(f(x+eps) - f(x-eps)) / 2eps` on up to
/// `samples` trainable coordinates (all of them when `None`).
///
/// The error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_difference_check<L: LossFn>(
    f: &mut L,
    eps: f64,
    samples: Option<usize>,
    seed: u64,
) -> Result<GradCheck> {
    let (l0, grads) = f.eval()?;
    let (l1, _) = f.eval()?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::NonDeterministic {
            first: l0,
            second: l1,
        });
    }

    let mut coords: Vec<(usize, String, usize)> = Vec::new();
    for (pi, p) in f.params_mut().iter().enumerate() {
        if p.trainable {
            coords.extend((0..p.numel()).map(|j| (pi, p.name.clone(), j)));
        }
    }
    let chosen: Vec<usize> = match samples {
        Some(n) if n < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, coords.len(), n).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..coords.len()).collect(),
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        coordinates: chosen.len(),
        worst: None,
    };
    for ci in chosen {
        let (pi, ref name, j) = coords[ci];
        let analytic = grads.param(name).map_or(0.0, |g| g.data()[j]);
        let original = f.params_mut()[pi].data.data()[j];
        f.params_mut()[pi].data.data_mut()[j] = original + eps;
        let plus = f.eval()?.0;
        f.params_mut()[pi].data.data_mut()[j] = original - eps;
        let minus = f.eval()?.0;
        f.params_mut()[pi].data.data_mut()[j] = original;
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-12);
        let rel = (analytic - numeric).abs() / denom;
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((name.clone(), j));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};
    use std::cell::Cell;

    struct Quadratic {
        p: Parameter<f64>,
    }

    impl LossFn for Quadratic {
        fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
            vec![&mut self.p]
        }
        fn eval(&self) -> Result<(f64, Gradients<f64>)> {
            // sum(c_i * x_i^2)
            let mut g = Graph::new();
            let x = g.param(&self.p);
            let c = g.constant(Tensor::vector(vec![0.5, 2.0, -1.5, 3.0]));
            let xx = g.mul(x, x)?;
            let cxx = g.mul(c, xx)?;
            let s = g.sum(cxx);
            let grads = g.backward(s)?;
            Ok((g.value(s).data()[0], grads))
        }
    }

    #[test]
    fn quadratic_passes() {
        let mut q = Quadratic {
            p: Parameter::new("x", Tensor::vector(vec![0.3, -1.2, 2.0, 0.7])),
        };
        let r = finite_difference_check(&mut q, 1e-5, None, 0).unwrap();
        assert_eq!(r.coordinates, 4);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    struct Constant {
        p: Parameter<f64>,
    }

    impl LossFn for Constant {
        fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
            vec![&mut self.p]
        }
        fn eval(&self) -> Result<(f64, Gradients<f64>)> {
            let mut g = Graph::new();
            let _ = g.param(&self.p);
            let c = g.constant(Tensor::scalar(4.0));
            let grads = g.backward(c)?;
            Ok((4.0, grads))
        }
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut c = Constant {
            p: Parameter::new("x", Tensor::vector(vec![1.0, 2.0])),
        };
        let r = finite_difference_check(&mut c, 1e-5, None, 0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    struct Drifting {
        p: Parameter<f64>,
        calls: Cell<u32>,
    }

    impl LossFn for Drifting {
        fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
            vec![&mut self.p]
        }
        fn eval(&self) -> Result<(f64, Gradients<f64>)> {
            self.calls.set(self.calls.get() + 1);
            Ok((self.calls.get() as f64, Gradients::default()))
        }
    }

    #[test]
    fn nondeterministic_loss_is_detected() {
        let mut d = Drifting {
            p: Parameter::new("x", Tensor::scalar(1.0)),
            calls: Cell::new(0),
        };
        assert!(matches!(
            finite_difference_check(&mut d, 1e-5, None, 0),
            Err(Error::NonDeterministic { .. })
        ));
    }
}
