//! Mini-batch training with per-epoch validation and best-checkpoint
//! early stopping, shared by every method.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{argmax, ClassificationHead, Encoder};
use crate::numerics::{kernels, Gradients, Graph, Parameter, Real, Tensor};
use crate::optim::Adam;
use crate::prompts::SoftPrompt;
use crate::seed;

use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 40,
            early_stop_patience: 5,
            seed: 0,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// What one training stage optimizes.
pub trait Objective: Sync {
    type Item: Sync;
    type Snapshot;

    fn example_loss(&self, ex: &Self::Item) -> Result<(f64, Gradients<f32>)>;
    fn trainable_mut(&mut self) -> Vec<&mut Parameter<f32>>;
    fn validation_accuracy(&self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Runs Adam over shuffled mini-batches, validates after every epoch, stops
/// after `early_stop_patience` epochs without improvement and restores the
/// best-validation state.
pub fn fit<O: Objective>(obj: &mut O, train: &[O::Item], cfg: &TrainRunConfig) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Insufficient("empty training split".into()));
    }
    let mut opt = Adam::new(cfg.learning_rate);
    let mut history = Vec::new();
    let mut best: Option<(f64, O::Snapshot)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(cfg.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&O::Item> = chunk.iter().map(|&i| &train[i]).collect();
            let results = exec::map_ordered(&batch, |ex| obj.example_loss(ex));
            let mut grads = Gradients::default();
            for r in results {
                let (loss, g) = r?;
                loss_sum += loss;
                grads.merge(&g);
            }
            grads.scale(1.0 / batch.len() as f32);
            let mut params = obj.trainable_mut();
            crate::numerics::accumulate_into(&mut params, &grads);
            opt.step(&mut params);
        }
        let val_accuracy = obj.validation_accuracy()?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_accuracy,
        });
        match &best {
            Some((b, _)) if val_accuracy <= *b => {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    break;
                }
            }
            _ => {
                best = Some((val_accuracy, obj.snapshot()));
                since_best = 0;
            }
        }
    }
    if let Some((_, snap)) = best {
        obj.restore(snap);
    }
    Ok(history)
}

/// Logits of one example under `[CLS, prompts..., tokens]`, prompts given
/// newest first.
pub fn forward_logits<'a, F: Real>(
    g: &mut Graph<'a, F>,
    model: &'a Encoder<F>,
    prompts: &[&'a SoftPrompt<F>],
    head: &'a ClassificationHead<F>,
    tokens: &[usize],
) -> Result<crate::numerics::NodeId> {
    let nodes = crate::progressive::forward_with_prompts(g, model, prompts, tokens)?;
    head.logits(g, nodes.cls)
}

/// Predicted class (ties to the lowest index).
pub fn predict(
    model: &Encoder<f32>,
    prompts: &[&SoftPrompt<f32>],
    head: &ClassificationHead<f32>,
    tokens: &[usize],
) -> Result<usize> {
    let mut g = Graph::new();
    let logits = forward_logits(&mut g, model, prompts, head, tokens)?;
    let probs = kernels::softmax(g.value(logits).data())?;
    Ok(argmax(&probs))
}

pub fn predictions(
    model: &Encoder<f32>,
    prompts: &[&SoftPrompt<f32>],
    head: &ClassificationHead<f32>,
    examples: &[Example],
) -> Result<Vec<usize>> {
    exec::map_ordered(examples, |ex| predict(model, prompts, head, &ex.tokens))
        .into_iter()
        .collect()
}

/// Fraction of correct predictions.
pub fn accuracy(
    model: &Encoder<f32>,
    prompts: &[&SoftPrompt<f32>],
    head: &ClassificationHead<f32>,
    examples: &[Example],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Insufficient("cannot score an empty split".into()));
    }
    let preds = predictions(model, prompts, head, examples)?;
    let correct = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.label)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

/// One stage of any method: optionally a trainable prompt placed in front
/// of a frozen prefix, the current task's head, and optionally a trainable
/// encoder.
pub struct StageObjective<'s> {
    pub model: &'s mut Encoder<f32>,
    pub active: Option<&'s mut SoftPrompt<f32>>,
    /// Earlier frozen prompts, newest first.
    pub prefix: Vec<&'s SoftPrompt<f32>>,
    pub head: &'s mut ClassificationHead<f32>,
    pub val: &'s [Example],
    /// Earlier tasks scored alongside the current one when early stopping
    /// monitors all seen tasks.
    pub seen: Vec<(&'s ClassificationHead<f32>, &'s [Example])>,
}

pub struct StageSnapshot {
    active: Option<SoftPrompt<f32>>,
    head: ClassificationHead<f32>,
    model: Option<Vec<Tensor<f32>>>,
}

impl StageObjective<'_> {
    fn prompts(&self) -> Vec<&SoftPrompt<f32>> {
        let mut out = Vec::with_capacity(self.prefix.len() + 1);
        if let Some(a) = &self.active {
            out.push(&**a);
        }
        out.extend(self.prefix.iter().copied());
        out
    }
}

impl Objective for StageObjective<'_> {
    type Item = Example;
    type Snapshot = StageSnapshot;

    fn example_loss(&self, ex: &Example) -> Result<(f64, Gradients<f32>)> {
        let prompts = self.prompts();
        let mut g = Graph::new();
        let logits = forward_logits(&mut g, self.model, &prompts, self.head, &ex.tokens)?;
        let loss = g.cross_entropy(logits, ex.label)?;
        let grads = g.backward(loss)?;
        Ok((f64::from(g.value(loss).data()[0]), grads.into_param_grads()))
    }

    fn trainable_mut(&mut self) -> Vec<&mut Parameter<f32>> {
        let mut out: Vec<&mut Parameter<f32>> = self
            .model
            .params_mut()
            .into_iter()
            .filter(|p| p.trainable)
            .collect();
        if let Some(a) = &mut self.active {
            out.extend(a.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    fn validation_accuracy(&self) -> Result<f64> {
        let prompts = self.prompts();
        let mut total = accuracy(self.model, &prompts, self.head, self.val)?;
        for (head, val) in &self.seen {
            total += accuracy(self.model, &prompts, head, val)?;
        }
        Ok(total / (1 + self.seen.len()) as f64)
    }

    fn snapshot(&self) -> StageSnapshot {
        let model = (!self.model.is_frozen())
            .then(|| self.model.params().iter().map(|p| p.data.clone()).collect());
        StageSnapshot {
            active: self.active.as_ref().map(|a| (**a).clone()),
            head: self.head.clone(),
            model,
        }
    }

    fn restore(&mut self, snapshot: StageSnapshot) {
        if let (Some(a), Some(s)) = (&mut self.active, snapshot.active) {
            **a = s;
        }
        *self.head = snapshot.head;
        if let Some(data) = snapshot.model {
            for (p, d) in self.model.params_mut().into_iter().zip(data) {
                p.data = d;
            }
        }
    }
}
