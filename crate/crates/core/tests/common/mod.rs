#![allow(dead_code)]

use std::io::Write;
use std::sync::OnceLock;

use pplab::data::TaskSpec;
use pplab::model::{Encoder, ModelConfig};
use pplab::pretrain::{pretrain_base, PretrainConfig};

pub const VOCAB: usize = 128;

pub fn model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: VOCAB,
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: 64,
        max_seq_len: 64,
    }
}

pub fn pretrain_config() -> PretrainConfig {
    PretrainConfig {
        tasks: 6,
        min_classes: 2,
        max_classes: 5,
        examples_per_task: 300,
        heldout_per_task: 60,
        tokens_per_class: 12,
        noise_rate: 0.7,
        sequence_length: 12,
        max_prefix: 20,
        learning_rate: 2e-3,
        batch_size: 8,
        max_epochs: 8,
        patience: 3,
        seed: 0,
    }
}

/// Pretrained, frozen base shared by every test in a binary.
pub fn base() -> &'static Encoder<f32> {
    static BASE: OnceLock<Encoder<f32>> = OnceLock::new();
    BASE.get_or_init(|| pretrain_base(&model_config(), &pretrain_config()).unwrap().0)
}

/// Untrained frozen encoder for tests that only need the plumbing.
pub fn tiny_base(seed: u64) -> Encoder<f32> {
    let mut m = Encoder::new(
        ModelConfig {
            vocab_size: 40,
            embed_dim: 16,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 32,
            max_seq_len: 48,
        },
        seed,
    )
    .unwrap();
    m.freeze_base();
    m
}

pub struct Spec {
    pub classes: usize,
    pub vocab: usize,
    pub tokens_per_class: usize,
    pub noise: f64,
    pub length: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Spec {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            vocab: VOCAB,
            tokens_per_class: 12,
            noise: 0.7,
            length: 12,
            train: 100,
            val: 20,
            test: 50,
        }
    }

    /// Sizes are per class.
    pub fn build(&self, seed: u64) -> TaskSpec {
        TaskSpec {
            num_classes: self.classes,
            vocab_size: self.vocab,
            tokens_per_class: self.tokens_per_class,
            noise_rate: self.noise,
            relatedness: 0.0,
            parent: None,
            sequence_length: self.length,
            train_size: self.train * self.classes,
            val_size: self.val * self.classes,
            test_size: self.test * self.classes,
            seed,
        }
    }
}

/// Writes straight to stderr so the line shows up even when libtest
/// captures output.
pub fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

pub fn bits(t: &pplab::numerics::Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|x| x.to_bits()).collect()
}
