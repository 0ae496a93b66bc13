//! Pre-LN transformer encoder with a CLS-position classification head.

mod head;

pub use head::{argmax, classify_cls, ClassificationHead};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Parameter, Real, Tensor, LAYER_NORM_EPS};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_seq_len: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::ModelConfig(format!("{name} must be positive")));
            }
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::ModelConfig(format!(
                "num_heads {} does not divide embed_dim {}",
                self.num_heads, self.embed_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<F> {
    pub ln1_gamma: Parameter<F>,
    pub ln1_beta: Parameter<F>,
    pub wq: Parameter<F>,
    pub bq: Parameter<F>,
    pub wk: Parameter<F>,
    pub bk: Parameter<F>,
    pub wv: Parameter<F>,
    pub bv: Parameter<F>,
    pub wo: Parameter<F>,
    pub bo: Parameter<F>,
    pub ln2_gamma: Parameter<F>,
    pub ln2_beta: Parameter<F>,
    pub w1: Parameter<F>,
    pub b1: Parameter<F>,
    pub w2: Parameter<F>,
    pub b2: Parameter<F>,
}

impl<F: Real> EncoderLayer<F> {
    fn params(&self) -> [&Parameter<F>; 16] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn params_mut(&mut self) -> [&mut Parameter<F>; 16] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// Hidden states (`S x e`) and per-layer, per-head attention maps (`S x S`).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState<F> {
    pub hidden: Tensor<F>,
    pub attention: Vec<Vec<Tensor<F>>>,
}

/// Graph handles produced by one encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderNodes {
    pub hidden: NodeId,
    pub cls: NodeId,
    /// One attention node per layer.
    pub attention: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<F> {
    pub config: ModelConfig,
    pub token_embedding: Parameter<F>,
    pub position_embedding: Parameter<F>,
    pub cls: Parameter<F>,
    pub layers: Vec<EncoderLayer<F>>,
    pub final_gamma: Parameter<F>,
    pub final_beta: Parameter<F>,
}

fn uniform<F: Real>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| F::lit(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn xavier<F: Real>(rng: &mut impl Rng, out: usize, inp: usize) -> Tensor<F> {
    uniform(rng, &[out, inp], (6.0 / (out + inp) as f64).sqrt())
}

impl<F: Real> Encoder<F> {
    /// Randomly initialized encoder; every parameter starts trainable.
    pub fn new(config: ModelConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed_value, "encoder-init", 0);
        let e = config.embed_dim;
        let ff = config.ffn_dim;
        let p = |name: String, t: Tensor<F>| Parameter::new(name, t);
        let token_embedding = p(
            "enc.token".into(),
            uniform(&mut rng, &[config.vocab_size, e], 1.0),
        );
        let position_embedding = p(
            "enc.position".into(),
            uniform(&mut rng, &[config.max_seq_len, e], 0.2),
        );
        let cls = p("enc.cls".into(), uniform(&mut rng, &[1, e], 1.0));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let n = |s: &str| format!("enc.l{l}.{s}");
            layers.push(EncoderLayer {
                ln1_gamma: p(n("ln1.gamma"), Tensor::full(&[e], F::one())),
                ln1_beta: p(n("ln1.beta"), Tensor::zeros(&[e])),
                wq: p(n("wq"), xavier(&mut rng, e, e)),
                bq: p(n("bq"), Tensor::zeros(&[e])),
                wk: p(n("wk"), xavier(&mut rng, e, e)),
                bk: p(n("bk"), Tensor::zeros(&[e])),
                wv: p(n("wv"), xavier(&mut rng, e, e)),
                bv: p(n("bv"), Tensor::zeros(&[e])),
                wo: p(n("wo"), xavier(&mut rng, e, e)),
                bo: p(n("bo"), Tensor::zeros(&[e])),
                ln2_gamma: p(n("ln2.gamma"), Tensor::full(&[e], F::one())),
                ln2_beta: p(n("ln2.beta"), Tensor::zeros(&[e])),
                w1: p(n("w1"), xavier(&mut rng, ff, e)),
                b1: p(n("b1"), Tensor::zeros(&[ff])),
                w2: p(n("w2"), xavier(&mut rng, e, ff)),
                b2: p(n("b2"), Tensor::zeros(&[e])),
            });
        }
        Ok(Self {
            token_embedding,
            position_embedding,
            cls,
            layers,
            final_gamma: p("enc.final.gamma".into(), Tensor::full(&[e], F::one())),
            final_beta: p("enc.final.beta".into(), Tensor::zeros(&[e])),
            config,
        })
    }

    /// All parameters in a fixed order.
    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding, &self.cls];
        for l in &self.layers {
            out.extend(l.params());
        }
        out.push(&self.final_gamma);
        out.push(&self.final_beta);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = vec![
            &mut self.token_embedding,
            &mut self.position_embedding,
            &mut self.cls,
        ];
        for l in &mut self.layers {
            out.extend(l.params_mut());
        }
        out.push(&mut self.final_gamma);
        out.push(&mut self.final_beta);
        out
    }

    /// Marks every base parameter non-trainable.
    pub fn freeze_base(&mut self) {
        self.set_trainable(false);
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.set_trainable(trainable);
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| !p.trainable)
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).count()
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn cast<G: Real>(&self) -> Encoder<G> {
        let c = |p: &Parameter<F>| p.cast::<G>();
        Encoder {
            config: self.config.clone(),
            token_embedding: c(&self.token_embedding),
            position_embedding: c(&self.position_embedding),
            cls: c(&self.cls),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    ln1_gamma: c(&l.ln1_gamma),
                    ln1_beta: c(&l.ln1_beta),
                    wq: c(&l.wq),
                    bq: c(&l.bq),
                    wk: c(&l.wk),
                    bk: c(&l.bk),
                    wv: c(&l.wv),
                    bv: c(&l.bv),
                    wo: c(&l.wo),
                    bo: c(&l.bo),
                    ln2_gamma: c(&l.ln2_gamma),
                    ln2_beta: c(&l.ln2_beta),
                    w1: c(&l.w1),
                    b1: c(&l.b1),
                    w2: c(&l.w2),
                    b2: c(&l.b2),
                })
                .collect(),
            final_gamma: c(&self.final_gamma),
            final_beta: c(&self.final_beta),
        }
    }

    /// Token rows plus positional rows for positions `start..start + ids.len()`.
    pub fn embed<'a>(&'a self, g: &mut Graph<'a, F>, ids: &[usize], start: usize) -> Result<NodeId> {
        let end = start + ids.len();
        if end > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: end,
                max: self.config.max_seq_len,
            });
        }
        let table = g.param(&self.token_embedding);
        let tok = g.gather(table, ids)?;
        let pos_table = g.param(&self.position_embedding);
        let positions: Vec<usize> = (start..end).collect();
        let pos = g.gather(pos_table, &positions)?;
        g.add(tok, pos)
    }

    /// Content rows (no positions) of the given token ids.
    pub fn token_rows<'a>(&'a self, g: &mut Graph<'a, F>, ids: &[usize]) -> Result<NodeId> {
        let table = g.param(&self.token_embedding);
        g.gather(table, ids)
    }

    /// Builds `[CLS, blocks..., tokens]`, adds positions over the whole
    /// composed sequence and runs the encoder.
    pub fn forward_composed<'a>(
        &'a self,
        g: &mut Graph<'a, F>,
        blocks: &[NodeId],
        tokens: &[usize],
    ) -> Result<EncoderNodes> {
        let cls = g.param(&self.cls);
        let text = self.token_rows(g, tokens)?;
        let mut parts = Vec::with_capacity(blocks.len() + 2);
        parts.push(cls);
        parts.extend_from_slice(blocks);
        parts.push(text);
        let content = g.concat_rows(&parts)?;
        let s = g.value(content).rows();
        if s > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: s,
                max: self.config.max_seq_len,
            });
        }
        let pos_table = g.param(&self.position_embedding);
        let positions: Vec<usize> = (0..s).collect();
        let pos = g.gather(pos_table, &positions)?;
        let x = g.add(content, pos)?;
        self.forward_embeddings(g, x)
    }

    /// Runs the encoder stack over an `S x e` input node.
    pub fn forward_embeddings<'a>(&'a self, g: &mut Graph<'a, F>, input: NodeId) -> Result<EncoderNodes> {
        let (s, e) = g.value(input).dims2();
        if e != self.config.embed_dim {
            return Err(Error::shape(
                "encode",
                format!("input width {e}, model width {}", self.config.embed_dim),
            ));
        }
        if s > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: s,
                max: self.config.max_seq_len,
            });
        }
        let eps = F::lit(LAYER_NORM_EPS);
        let mut x = input;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (g1, b1) = (g.param(&layer.ln1_gamma), g.param(&layer.ln1_beta));
            let h = g.layer_norm(x, g1, b1, eps)?;
            let q = linear(g, h, &layer.wq, &layer.bq)?;
            let k = linear(g, h, &layer.wk, &layer.bk)?;
            let v = linear(g, h, &layer.wv, &layer.bv)?;
            let a = g.attention(q, k, v, self.config.num_heads)?;
            attention.push(a);
            let o = linear(g, a, &layer.wo, &layer.bo)?;
            x = g.add(x, o)?;

            let (g2, b2) = (g.param(&layer.ln2_gamma), g.param(&layer.ln2_beta));
            let h = g.layer_norm(x, g2, b2, eps)?;
            let f = linear(g, h, &layer.w1, &layer.b1)?;
            let f = g.gelu(f);
            let f = linear(g, f, &layer.w2, &layer.b2)?;
            x = g.add(x, f)?;
        }
        let (gf, bf) = (g.param(&self.final_gamma), g.param(&self.final_beta));
        let hidden = g.layer_norm(x, gf, bf, eps)?;
        let cls = g.row(hidden, 0)?;
        Ok(EncoderNodes {
            hidden,
            cls,
            attention,
        })
    }

    /// Gradient-free pass over precomputed input embeddings.
    pub fn encode(&self, input: &Tensor<F>) -> Result<EncoderState<F>> {
        if input.rows() == 0 {
            return Err(Error::shape("encode", "empty input"));
        }
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let nodes = self.forward_embeddings(&mut g, x)?;
        Ok(self.state(&g, &nodes))
    }

    /// Copies hidden states and attention maps out of a finished pass.
    pub fn state(&self, g: &Graph<'_, F>, nodes: &EncoderNodes) -> EncoderState<F> {
        let hidden = g.value(nodes.hidden).clone();
        let s = hidden.rows();
        let attention = nodes
            .attention
            .iter()
            .map(|&id| {
                let (probs, heads) = g.attention_probs(id).expect("attention node");
                (0..heads)
                    .map(|h| {
                        Tensor::new(vec![s, s], probs[h * s * s..(h + 1) * s * s].to_vec())
                            .expect("square map")
                    })
                    .collect()
            })
            .collect();
        EncoderState { hidden, attention }
    }
}

/// `x W^T + b` for a weight stored `out x in`.
pub fn linear<'a, F: Real>(
    g: &mut Graph<'a, F>,
    x: NodeId,
    w: &'a Parameter<F>,
    b: &'a Parameter<F>,
) -> Result<NodeId> {
    let wn = g.param(w);
    let bn = g.param(b);
    let y = g.matmul_t(x, wn)?;
    g.add_row(y, bn)
}
