//! Inspection of trained prompt stacks and result export.

pub mod export;
pub mod stats;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::Encoder;
use crate::numerics::Graph;
use crate::progressive::forward_with_prompts;
use crate::prompts::SoftPrompt;

pub use export::{format_g9, read_matrix_csv, write_matrix_csv};
pub use stats::{sign_test, Alternative, SignTest};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }
}

/// `K x K` matrix over prompt blocks in training order: entry `(i, j)` is
/// the attention mass that tokens of prompt `i` put on prompt `j`, averaged
/// over heads, over the query tokens of `i` and over probe examples.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptAttentionMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub probes: usize,
}

/// Streaming average of per-example matrices; merging partial
/// accumulators gives the same result as one pass over all probes.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionAccumulator {
    k: usize,
    sums: Vec<CompensatedSum>,
    count: usize,
}

impl AttentionAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            sums: vec![CompensatedSum::default(); k * k],
            count: 0,
        }
    }

    pub fn add(&mut self, example: &[f64]) -> Result<()> {
        if example.len() != self.k * self.k {
            return Err(Error::shape(
                "attention accumulate",
                format!("{} entries for {} blocks", example.len(), self.k),
            ));
        }
        for (s, &x) in self.sums.iter_mut().zip(example) {
            s.add(x);
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &AttentionAccumulator) -> Result<()> {
        if other.k != self.k {
            return Err(Error::shape("attention merge", format!("{} vs {} blocks", self.k, other.k)));
        }
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            s.merge(o);
        }
        self.count += other.count;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self, names: Vec<String>) -> Result<PromptAttentionMatrix> {
        if self.count == 0 {
            return Err(Error::Insufficient("no probe examples".into()));
        }
        if names.len() != self.k {
            return Err(Error::shape("attention names", format!("{} names for {} blocks", names.len(), self.k)));
        }
        let n = self.count as f64;
        let values = (0..self.k)
            .map(|i| (0..self.k).map(|j| self.sums[i * self.k + j].value() / n).collect())
            .collect();
        Ok(PromptAttentionMatrix {
            names,
            values,
            probes: self.count,
        })
    }
}

/// The block-to-block attention of one probe, row-major `K x K`.
/// `prompts` are in training order.
pub fn example_attention(
    model: &Encoder<f32>,
    prompts: &[SoftPrompt<f32>],
    tokens: &[usize],
    layer: usize,
) -> Result<Vec<f64>> {
    let layers = model.config.num_layers;
    if layer >= layers {
        return Err(Error::LayerOutOfRange { layer, layers });
    }
    let k = prompts.len();
    let newest_first: Vec<&SoftPrompt<f32>> = prompts.iter().rev().collect();
    let mut g = Graph::new();
    let nodes = forward_with_prompts(&mut g, model, &newest_first, tokens)?;
    let (probs, heads) = g
        .attention_probs(nodes.attention[layer])
        .ok_or_else(|| Error::shape("attention", "not an attention node"))?;
    let s = g.value(nodes.hidden).rows();

    // Start of each block, indexed by training order.
    let mut starts = vec![0; k];
    let mut at = 1;
    for (pos, p) in newest_first.iter().enumerate() {
        starts[k - 1 - pos] = at;
        at += p.len();
    }
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        let (qi, qn) = (starts[i], prompts[i].len());
        for j in 0..k {
            let (kj, kn) = (starts[j], prompts[j].len());
            let mut acc = CompensatedSum::default();
            for h in 0..heads {
                for q in qi..qi + qn {
                    let row = &probs[h * s * s + q * s..h * s * s + (q + 1) * s];
                    for &p in &row[kj..kj + kn] {
                        acc.add(f64::from(p));
                    }
                }
            }
            out[i * k + j] = acc.value() / (heads * qn) as f64;
        }
    }
    Ok(out)
}

/// Averages [`example_attention`] over probe inputs. `layer` defaults to
/// the last encoder layer.
pub fn prompt_attention_matrix(
    model: &Encoder<f32>,
    prompts: &[SoftPrompt<f32>],
    names: Vec<String>,
    probes: &[Vec<usize>],
    layer: Option<usize>,
) -> Result<PromptAttentionMatrix> {
    if prompts.is_empty() {
        return Err(Error::Prompt("no prompts to analyse".into()));
    }
    if probes.is_empty() {
        return Err(Error::Insufficient("no probe examples".into()));
    }
    let layer = layer.unwrap_or(model.config.num_layers - 1);
    let per_example = exec::map_ordered(probes, |t| example_attention(model, prompts, t, layer));
    let mut acc = AttentionAccumulator::new(prompts.len());
    for m in per_example {
        acc.add(&m?)?;
    }
    acc.finish(names)
}

/// Writes the matrix as CSV: a header of block names, then one row per
/// block.
pub fn export_csv(matrix: &PromptAttentionMatrix, path: &std::path::Path) -> Result<()> {
    write_matrix_csv(path, &matrix.names, &matrix.values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = CompensatedSum::default();
        let mut naive = 0.0;
        for x in [1e16, 1.0, -1e16, 1.0] {
            c.add(x);
            naive += x;
        }
        assert_eq!(c.value(), 2.0);
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![0.1 * i as f64, 0.3, 1.0 / (i + 1) as f64, 0.0]).collect();
        let mut all = AttentionAccumulator::new(2);
        for x in &xs {
            all.add(x).unwrap();
        }
        let mut a = AttentionAccumulator::new(2);
        let mut b = AttentionAccumulator::new(2);
        for x in &xs[..3] {
            a.add(x).unwrap();
        }
        for x in &xs[3..] {
            b.add(x).unwrap();
        }
        a.merge(&b).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let m1 = all.finish(names.clone()).unwrap();
        let m2 = a.finish(names).unwrap();
        for (r1, r2) in m1.values.iter().zip(&m2.values) {
            for (x, y) in r1.iter().zip(r2) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
