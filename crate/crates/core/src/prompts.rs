//! Soft prompts: initialization from vocabulary rows, residual MLP
//! reparameterization while training, and fold-in once training ends.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::linear;
use crate::numerics::{Graph, NodeId, Parameter, Real, Tensor};
use crate::seed;

/// Two-layer MLP applied to each prompt row, with a skip connection:
/// `p' = W2 gelu(W1 p + b1) + b2 + p`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReparam<F> {
    /// `hidden x e`.
    pub w1: Parameter<F>,
    pub b1: Parameter<F>,
    /// `e x hidden`.
    pub w2: Parameter<F>,
    pub b2: Parameter<F>,
}

impl<F: Real> ResidualReparam<F> {
    /// Weights uniform in ±0.02, biases zero.
    pub fn new(task_id: usize, embed_dim: usize, hidden: usize, seed_value: u64) -> Self {
        let mut rng = seed::rng(seed_value, "reparam-init", task_id as u64);
        let mut u = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            let d = (0..n).map(|_| F::lit(rng.gen_range(-0.02..=0.02))).collect();
            Tensor::new(shape.to_vec(), d).expect("shape")
        };
        let w1 = u(&[hidden, embed_dim]);
        let w2 = u(&[embed_dim, hidden]);
        let n = |s: &str| format!("prompt{task_id}.mlp.{s}");
        Self {
            w1: Parameter::new(n("w1"), w1),
            b1: Parameter::new(n("b1"), Tensor::zeros(&[hidden])),
            w2: Parameter::new(n("w2"), w2),
            b2: Parameter::new(n("b2"), Tensor::zeros(&[embed_dim])),
        }
    }

    /// All-zero MLP: the reparameterized prompt equals the raw prompt.
    pub fn zeros(task_id: usize, embed_dim: usize, hidden: usize) -> Self {
        let n = |s: &str| format!("prompt{task_id}.mlp.{s}");
        Self {
            w1: Parameter::new(n("w1"), Tensor::zeros(&[hidden, embed_dim])),
            b1: Parameter::new(n("b1"), Tensor::zeros(&[hidden])),
            w2: Parameter::new(n("w2"), Tensor::zeros(&[embed_dim, hidden])),
            b2: Parameter::new(n("b2"), Tensor::zeros(&[embed_dim])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.data.rows()
    }

    pub fn params(&self) -> [&Parameter<F>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Applies the residual MLP row-wise to `p` (`M x e`).
    pub fn apply<'a>(&'a self, g: &mut Graph<'a, F>, p: NodeId) -> Result<NodeId> {
        let h = linear(g, p, &self.w1, &self.b1)?;
        let h = g.gelu(h);
        let out = linear(g, h, &self.w2, &self.b2)?;
        g.add(out, p)
    }

    fn cast<G: Real>(&self) -> ResidualReparam<G> {
        ResidualReparam {
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            w2: self.w2.cast(),
            b2: self.b2.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftPrompt<F> {
    pub task_id: usize,
    /// `M x e`.
    pub embeddings: Parameter<F>,
    pub frozen: bool,
    pub reparam: Option<ResidualReparam<F>>,
}

/// Prompt whose `length` rows are copies of vocabulary rows drawn uniformly
/// with replacement.
pub fn init_prompt<F: Real>(
    task_id: usize,
    length: usize,
    vocab_embeddings: &Tensor<F>,
    seed_value: u64,
) -> Result<SoftPrompt<F>> {
    if length < 1 {
        return Err(Error::Prompt("prompt length must be at least 1".into()));
    }
    let (v, e) = vocab_embeddings.dims2();
    if v == 0 || e == 0 {
        return Err(Error::Prompt("empty vocabulary embeddings".into()));
    }
    let mut rng = seed::rng(seed_value, "prompt-init", task_id as u64);
    let mut data = Vec::with_capacity(length * e);
    for _ in 0..length {
        data.extend_from_slice(vocab_embeddings.row(rng.gen_range(0..v)));
    }
    Ok(SoftPrompt {
        task_id,
        embeddings: Parameter::new(
            format!("prompt{task_id}.embeddings"),
            Tensor::new(vec![length, e], data)?,
        ),
        frozen: false,
        reparam: None,
    })
}

impl<F: Real> SoftPrompt<F> {
    pub fn with_reparam(mut self, reparam: ResidualReparam<F>) -> Self {
        self.reparam = Some(reparam);
        self
    }

    pub fn len(&self) -> usize {
        self.embeddings.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.data.cols()
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = vec![&self.embeddings];
        if let Some(r) = &self.reparam {
            out.extend(r.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = vec![&mut self.embeddings];
        if let Some(r) = &mut self.reparam {
            out.extend(r.params_mut());
        }
        out
    }

    /// The prompt block as it enters the encoder: raw rows when frozen or
    /// without an MLP, otherwise the reparameterized rows.
    pub fn node<'a>(&'a self, g: &mut Graph<'a, F>) -> Result<NodeId> {
        if self.frozen {
            return Ok(g.constant_ref(&self.embeddings.data));
        }
        let p = g.param(&self.embeddings);
        match &self.reparam {
            Some(r) => r.apply(g, p),
            None => Ok(p),
        }
    }

    /// Effective prompt `P' = MLP(P) + P` (or `P` when no MLP is attached).
    pub fn reparameterize(&self) -> Result<Tensor<F>> {
        if self.frozen {
            return Err(Error::Prompt("reparameterize after fold-in".into()));
        }
        let mut g = Graph::new();
        let n = self.node(&mut g)?;
        Ok(g.value(n).clone())
    }

    /// Replaces the embeddings by their projection, drops the MLP and
    /// freezes the prompt.
    pub fn fold_in(&mut self) -> Result<()> {
        if self.frozen {
            return Err(Error::Prompt("prompt is already folded in".into()));
        }
        let projected = self.reparameterize()?;
        self.embeddings.data = projected;
        self.embeddings.set_trainable(false);
        self.reparam = None;
        self.frozen = true;
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> SoftPrompt<G> {
        SoftPrompt {
            task_id: self.task_id,
            embeddings: self.embeddings.cast(),
            frozen: self.frozen,
            reparam: self.reparam.as_ref().map(|r| r.cast()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kernels::gelu;
    use approx::assert_abs_diff_eq;

    fn table() -> Tensor<f64> {
        Tensor::from_f64(
            &[4, 3],
            &[0.1, 0.2, 0.3, -1.0, 0.5, 0.0, 2.0, -2.0, 1.0, 0.7, 0.7, 0.7],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_from_table() {
        let t = table();
        let a = init_prompt(3, 20, &t, 11).unwrap();
        let b = init_prompt(3, 20, &t, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(!a.frozen);
        for i in 0..20 {
            let row = a.embeddings.data.row(i);
            assert!((0..4).any(|v| t.row(v) == row));
        }
        assert!(init_prompt(3, 0, &t, 11).is_err());
    }

    #[test]
    fn zero_mlp_is_exact_identity() {
        let p = init_prompt(0, 5, &table(), 1)
            .unwrap()
            .with_reparam(ResidualReparam::zeros(0, 3, 3));
        let out = p.reparameterize().unwrap();
        assert!(out.bit_eq(&p.embeddings.data));
    }

    #[test]
    fn hand_computed_one_unit_mlp() {
        let mut p = init_prompt(0, 2, &table(), 1).unwrap();
        p.embeddings.data =
            Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let mut r = ResidualReparam::zeros(0, 3, 1);
        r.w1.data = Tensor::from_f64(&[1, 3], &[0.3, -0.2, 0.1]).unwrap();
        r.b1.data = Tensor::from_f64(&[1], &[0.05]).unwrap();
        r.w2.data = Tensor::from_f64(&[3, 1], &[1.0, -2.0, 0.5]).unwrap();
        r.b2.data = Tensor::from_f64(&[3], &[0.01, 0.02, 0.03]).unwrap();
        let p = p.with_reparam(r);
        let out = p.reparameterize().unwrap();
        let rows = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        for (i, row) in rows.iter().enumerate() {
            let h = gelu(0.3 * row[0] - 0.2 * row[1] + 0.1 * row[2] + 0.05);
            let expect = [
                h * 1.0 + 0.01 + row[0],
                h * -2.0 + 0.02 + row[1],
                h * 0.5 + 0.03 + row[2],
            ];
            for j in 0..3 {
                assert_abs_diff_eq!(out.row(i)[j], expect[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fold_in_freezes_and_drops_mlp() {
        let mut p = init_prompt(0, 4, &table(), 1)
            .unwrap()
            .with_reparam(ResidualReparam::new(0, 3, 3, 5));
        let expected = p.reparameterize().unwrap();
        p.fold_in().unwrap();
        assert!(p.frozen);
        assert!(p.reparam.is_none());
        assert!(!p.embeddings.trainable);
        assert!(p.embeddings.data.bit_eq(&expected));
        assert!(p.fold_in().is_err());
        assert!(p.reparameterize().is_err());
    }

    #[test]
    fn zero_mlp_fold_in_is_bit_exact() {
        let mut p = init_prompt(0, 4, &table(), 1)
            .unwrap()
            .with_reparam(ResidualReparam::zeros(0, 3, 2));
        let before = p.embeddings.data.clone();
        p.fold_in().unwrap();
        assert!(p.embeddings.data.bit_eq(&before));
    }
}
