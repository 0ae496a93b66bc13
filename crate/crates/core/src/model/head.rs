use rand::Rng;

use super::EncoderState;
use crate::error::{Error, Result};
use crate::numerics::{kernels, Graph, NodeId, Parameter, Real, Tensor};
use crate::seed;

/// Per-task linear classifier over the CLS hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationHead<F> {
    pub task_id: usize,
    /// `C x e`.
    pub weight: Parameter<F>,
    /// `C`.
    pub bias: Parameter<F>,
}

impl<F: Real> ClassificationHead<F> {
    /// Small uniform weights (±0.02), zero bias.
    pub fn new(task_id: usize, classes: usize, embed_dim: usize, seed_value: u64) -> Self {
        let mut rng = seed::rng(seed_value, "head-init", task_id as u64);
        let w = (0..classes * embed_dim)
            .map(|_| F::lit(rng.gen_range(-0.02..=0.02)))
            .collect();
        Self {
            task_id,
            weight: Parameter::new(
                format!("head{task_id}.weight"),
                Tensor::new(vec![classes, embed_dim], w).expect("shape"),
            ),
            bias: Parameter::new(format!("head{task_id}.bias"), Tensor::zeros(&[classes])),
        }
    }

    pub fn zeros(task_id: usize, classes: usize, embed_dim: usize) -> Self {
        Self {
            task_id,
            weight: Parameter::new(
                format!("head{task_id}.weight"),
                Tensor::zeros(&[classes, embed_dim]),
            ),
            bias: Parameter::new(format!("head{task_id}.bias"), Tensor::zeros(&[classes])),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.data.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.data.cols()
    }

    pub fn params(&self) -> [&Parameter<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.weight.set_trainable(trainable);
        self.bias.set_trainable(trainable);
    }

    /// Logit row (`1 x C`) for a `1 x e` CLS node.
    pub fn logits<'a>(&'a self, g: &mut Graph<'a, F>, cls: NodeId) -> Result<NodeId> {
        let e = g.value(cls).cols();
        if e != self.embed_dim() {
            return Err(Error::shape(
                "classify_cls",
                format!("hidden width {e}, head width {}", self.embed_dim()),
            ));
        }
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let y = g.matmul_t(cls, w)?;
        g.add_row(y, b)
    }

    pub fn cast<G: Real>(&self) -> ClassificationHead<G> {
        ClassificationHead {
            task_id: self.task_id,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Class probabilities from the hidden state at position 0.
pub fn classify_cls<F: Real>(state: &EncoderState<F>, head: &ClassificationHead<F>) -> Result<Vec<F>> {
    if state.hidden.rows() == 0 {
        return Err(Error::shape("classify_cls", "empty encoder state"));
    }
    let h = state.hidden.row(0);
    if h.len() != head.embed_dim() {
        return Err(Error::shape(
            "classify_cls",
            format!("hidden width {}, head width {}", h.len(), head.embed_dim()),
        ));
    }
    let c = head.num_classes();
    let logits = kernels::matmul_bt(h, head.weight.data.data(), 1, h.len(), c);
    let logits: Vec<F> = logits
        .iter()
        .zip(head.bias.data.data())
        .map(|(&z, &b)| z + b)
        .collect();
    kernels::softmax(&logits)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
