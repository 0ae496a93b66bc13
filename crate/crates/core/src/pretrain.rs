//! Multi-task pretraining of the base encoder on synthetic pretext tasks.
//!
//! Each pretext task gets its own head (discarded afterwards). Inputs carry
//! a random-length prefix of random tokens so the encoder sees the text at
//! many offsets, as it will once prompts are prepended.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_task, Example, TaskSpec};
use crate::error::{Error, Result};
use crate::model::{ClassificationHead, Encoder, ModelConfig};
use crate::numerics::{Gradients, Graph, Parameter, Tensor};
use crate::seed;
use crate::train::{self, Objective, TrainRunConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Number of pretext tasks; 0 keeps the random initialization.
    pub tasks: usize,
    pub min_classes: usize,
    pub max_classes: usize,
    pub examples_per_task: usize,
    pub heldout_per_task: usize,
    pub tokens_per_class: usize,
    pub noise_rate: f64,
    pub sequence_length: usize,
    pub max_prefix: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            tasks: 8,
            min_classes: 2,
            max_classes: 5,
            examples_per_task: 400,
            heldout_per_task: 100,
            tokens_per_class: 8,
            noise_rate: 0.6,
            sequence_length: 16,
            max_prefix: 32,
            learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 10,
            patience: 3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub epochs: usize,
    pub final_train_loss: f64,
    /// Held-out accuracy per pretext task.
    pub heldout_accuracy: Vec<f64>,
}

impl PretrainReport {
    pub fn mean_heldout_accuracy(&self) -> f64 {
        if self.heldout_accuracy.is_empty() {
            return 0.0;
        }
        self.heldout_accuracy.iter().sum::<f64>() / self.heldout_accuracy.len() as f64
    }
}

struct Pretext<'s> {
    model: &'s mut Encoder<f32>,
    heads: &'s mut Vec<ClassificationHead<f32>>,
    val: &'s [(usize, Example)],
}

fn logits_of(model: &Encoder<f32>, head: &ClassificationHead<f32>, tokens: &[usize]) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let nodes = model.forward_composed(&mut g, &[], tokens)?;
    let l = head.logits(&mut g, nodes.cls)?;
    Ok(g.value(l).data().to_vec())
}

fn accuracy(model: &Encoder<f32>, heads: &[ClassificationHead<f32>], items: &[(usize, Example)]) -> Result<f64> {
    let hits = crate::exec::map_ordered(items, |(t, ex)| -> Result<bool> {
        Ok(crate::model::argmax(&logits_of(model, &heads[*t], &ex.tokens)?) == ex.label)
    });
    let mut correct = 0;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / items.len().max(1) as f64)
}

impl Objective for Pretext<'_> {
    type Item = (usize, Example);
    type Snapshot = (Vec<Tensor<f32>>, Vec<ClassificationHead<f32>>);

    fn example_loss(&self, (t, ex): &(usize, Example)) -> Result<(f64, Gradients<f32>)> {
        let mut g = Graph::new();
        let nodes = self.model.forward_composed(&mut g, &[], &ex.tokens)?;
        let logits = self.heads[*t].logits(&mut g, nodes.cls)?;
        let loss = g.cross_entropy(logits, ex.label)?;
        let grads = g.backward(loss)?;
        Ok((f64::from(g.value(loss).data()[0]), grads.into_param_grads()))
    }

    fn trainable_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut out = self.model.params_mut();
        for h in self.heads.iter_mut() {
            out.extend(h.params_mut());
        }
        out
    }

    fn validation_accuracy(&self) -> Result<f64> {
        accuracy(self.model, self.heads, self.val)
    }

    fn snapshot(&self) -> Self::Snapshot {
        (
            self.model.params().iter().map(|p| p.data.clone()).collect(),
            self.heads.clone(),
        )
    }

    fn restore(&mut self, (params, heads): Self::Snapshot) {
        for (p, d) in self.model.params_mut().into_iter().zip(params) {
            p.data = d;
        }
        *self.heads = heads;
    }
}

/// Trains a fresh encoder on the pretext tasks, then freezes it.
pub fn pretrain_base(model_cfg: &ModelConfig, cfg: &PretrainConfig) -> Result<(Encoder<f32>, PretrainReport)> {
    let mut model = Encoder::new(model_cfg.clone(), seed::derive(cfg.seed, "model", 0))?;
    if cfg.tasks == 0 {
        model.freeze_base();
        return Ok((
            model,
            PretrainReport {
                epochs: 0,
                final_train_loss: f64::NAN,
                heldout_accuracy: Vec::new(),
            },
        ));
    }
    if cfg.min_classes < 2 || cfg.max_classes < cfg.min_classes {
        return Err(Error::Config(format!(
            "pretrain classes must satisfy 2 <= min_classes <= max_classes, got {}..{}",
            cfg.min_classes, cfg.max_classes
        )));
    }
    if 1 + cfg.sequence_length > model_cfg.max_seq_len {
        return Err(Error::Config(format!(
            "pretrain sequence_length {} does not fit max_seq_len {}",
            cfg.sequence_length, model_cfg.max_seq_len
        )));
    }
    let max_prefix = cfg.max_prefix.min(model_cfg.max_seq_len - 1 - cfg.sequence_length);

    let mut rng = seed::rng(cfg.seed, "pretext", 0);
    let mut train_items = Vec::new();
    let mut val_items = Vec::new();
    let mut test_items = Vec::new();
    let mut heads = Vec::new();
    for t in 0..cfg.tasks {
        let classes = rng.gen_range(cfg.min_classes..=cfg.max_classes);
        let spec = TaskSpec {
            num_classes: classes,
            vocab_size: model_cfg.vocab_size,
            tokens_per_class: cfg.tokens_per_class,
            noise_rate: cfg.noise_rate,
            relatedness: 0.0,
            parent: None,
            sequence_length: cfg.sequence_length,
            train_size: cfg.examples_per_task,
            val_size: cfg.heldout_per_task,
            test_size: cfg.heldout_per_task,
            seed: seed::derive(cfg.seed, "pretext-task", t as u64),
        };
        let task = generate_task(t, &format!("pretext{t}"), &spec)?;
        let mut with_prefix = |ex: Example| {
            let n = rng.gen_range(0..=max_prefix);
            let mut tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..model_cfg.vocab_size)).collect();
            tokens.extend(ex.tokens);
            (t, Example { tokens, label: ex.label })
        };
        train_items.extend(task.train.into_iter().map(&mut with_prefix));
        val_items.extend(task.val.into_iter().map(&mut with_prefix));
        test_items.push(task.test.into_iter().map(&mut with_prefix).collect::<Vec<_>>());
        heads.push(ClassificationHead::new(
            t,
            classes,
            model_cfg.embed_dim,
            seed::derive(cfg.seed, "pretext-head", t as u64),
        ));
    }

    let run = TrainRunConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        early_stop_patience: cfg.patience,
        seed: seed::derive(cfg.seed, "pretrain-shuffle", 0),
    };
    let history = train::fit(
        &mut Pretext {
            model: &mut model,
            heads: &mut heads,
            val: &val_items,
        },
        &train_items,
        &run,
    )?;
    model.freeze_base();
    let heldout_accuracy = test_items
        .iter()
        .map(|items| accuracy(&model, &heads, items))
        .collect::<Result<Vec<f64>>>()?;
    Ok((
        model,
        PretrainReport {
            epochs: history.len(),
            final_train_loss: history.last().map_or(f64::NAN, |r| r.train_loss),
            heldout_accuracy,
        },
    ))
}
