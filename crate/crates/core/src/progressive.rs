//! The growing stack of per-task prompts and its training procedure.
//!
//! Prompts are stored in training order; the encoder sees them newest first,
//! right after CLS: `[CLS, P_k, ..., P_1, text]`.

use crate::data::{Example, Task};
use crate::error::{Error, Result};
use crate::model::{ClassificationHead, Encoder, EncoderNodes};
use crate::numerics::{Graph, Real, Tensor};
use crate::prompts::SoftPrompt;
use crate::train::{self, EpochRecord, StageObjective, TrainRunConfig};

/// Checks the composed length and runs the encoder over
/// `[CLS, prompts..., tokens]` (prompts newest first).
pub fn forward_with_prompts<'a, F: Real>(
    g: &mut Graph<'a, F>,
    model: &'a Encoder<F>,
    prompts: &[&'a SoftPrompt<F>],
    tokens: &[usize],
) -> Result<EncoderNodes> {
    check_length(model, prompts, tokens.len())?;
    let mut blocks = Vec::with_capacity(prompts.len());
    for p in prompts {
        if p.embed_dim() != model.embed_dim() {
            return Err(Error::shape(
                "compose",
                format!("prompt width {}, model width {}", p.embed_dim(), model.embed_dim()),
            ));
        }
        blocks.push(p.node(g)?);
    }
    model.forward_composed(g, &blocks, tokens)
}

fn check_length<F: Real>(model: &Encoder<F>, prompts: &[&SoftPrompt<F>], text: usize) -> Result<()> {
    let prompt: usize = prompts.iter().map(|p| p.len()).sum();
    let total = 1 + prompt + text;
    if total > model.config.max_seq_len {
        return Err(Error::ComposeOverflow {
            prompt,
            text,
            total,
            max: model.config.max_seq_len,
        });
    }
    Ok(())
}

/// Which part of the composed sequence a position belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Cls,
    Prompt { task_id: usize },
    Text,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub len: usize,
}

/// The composed encoder input (content plus positions) and its layout.
#[derive(Clone, Debug)]
pub struct Composed {
    pub embeddings: Tensor<f32>,
    pub layout: Vec<Block>,
}

/// Layout of `[CLS, prompts..., text]` for prompts given newest first.
pub fn layout(prompts: &[&SoftPrompt<f32>], text: usize) -> Vec<Block> {
    let mut out = vec![Block {
        kind: BlockKind::Cls,
        start: 0,
        len: 1,
    }];
    let mut at = 1;
    for p in prompts {
        out.push(Block {
            kind: BlockKind::Prompt { task_id: p.task_id },
            start: at,
            len: p.len(),
        });
        at += p.len();
    }
    out.push(Block {
        kind: BlockKind::Text,
        start: at,
        len: text,
    });
    out
}

/// The full-stack input for `tokens`, as the encoder's first layer sees it.
pub fn compose_input(model: &Encoder<f32>, stack: &ProgressiveStack, tokens: &[usize]) -> Result<Composed> {
    let prompts = stack.full_prefix();
    check_length(model, &prompts, tokens.len())?;
    let mut g = Graph::new();
    let cls = g.param(&model.cls);
    let mut parts = vec![cls];
    for p in &prompts {
        parts.push(p.node(&mut g)?);
    }
    parts.push(model.token_rows(&mut g, tokens)?);
    let content = g.concat_rows(&parts)?;
    let s = g.value(content).rows();
    let pos_table = g.param(&model.position_embedding);
    let positions: Vec<usize> = (0..s).collect();
    let pos = g.gather(pos_table, &positions)?;
    let x = g.add(content, pos)?;
    Ok(Composed {
        embeddings: g.value(x).clone(),
        layout: layout(&prompts, tokens.len()),
    })
}

/// Frozen prompts in training order plus at most one prompt being trained.
#[derive(Clone, Debug, Default)]
pub struct ProgressiveStack {
    frozen: Vec<SoftPrompt<f32>>,
    active: Option<SoftPrompt<f32>>,
}

impl ProgressiveStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a stack from prompts that are all already frozen.
    pub fn from_frozen(prompts: Vec<SoftPrompt<f32>>) -> Result<Self> {
        if prompts.iter().any(|p| !p.frozen) {
            return Err(Error::Prompt("stack entries must be frozen".into()));
        }
        Ok(Self {
            frozen: prompts,
            active: None,
        })
    }

    pub fn frozen(&self) -> &[SoftPrompt<f32>] {
        &self.frozen
    }

    pub fn active(&self) -> Option<&SoftPrompt<f32>> {
        self.active.as_ref()
    }

    pub fn len(&self) -> usize {
        self.frozen.len() + usize::from(self.active.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_prompt_len(&self) -> usize {
        self.full_prefix().iter().map(|p| p.len()).sum()
    }

    /// Starts a new task with a fresh trainable prompt.
    pub fn push_active(&mut self, prompt: SoftPrompt<f32>) -> Result<()> {
        if self.active.is_some() {
            return Err(Error::Prompt("a prompt is already being trained".into()));
        }
        if prompt.frozen {
            return Err(Error::Prompt("new prompt must be trainable".into()));
        }
        if self.position(prompt.task_id).is_some() {
            return Err(Error::Prompt(format!(
                "task {} already has a prompt",
                prompt.task_id
            )));
        }
        self.active = Some(prompt);
        Ok(())
    }

    /// Folds in and freezes the active prompt, appending it to the stack.
    pub fn finish_active(&mut self) -> Result<()> {
        let mut p = self.active.take().ok_or(Error::NoActivePrompt)?;
        p.fold_in()?;
        self.frozen.push(p);
        Ok(())
    }

    fn position(&self, task_id: usize) -> Option<usize> {
        self.frozen
            .iter()
            .chain(self.active.as_ref())
            .position(|p| p.task_id == task_id)
    }

    /// Every prompt, newest first.
    pub fn full_prefix(&self) -> Vec<&SoftPrompt<f32>> {
        self.active
            .iter()
            .chain(self.frozen.iter().rev())
            .collect()
    }

    /// The prompts a task was trained under: its own and all earlier ones,
    /// newest first.
    pub fn prefix_for(&self, task_id: usize) -> Result<Vec<&SoftPrompt<f32>>> {
        let k = self.position(task_id).ok_or(Error::UnknownTask(task_id))?;
        let all: Vec<&SoftPrompt<f32>> = self.frozen.iter().chain(self.active.as_ref()).collect();
        Ok(all[..=k].iter().rev().copied().collect())
    }
}

/// Outcome of training one task.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub history: Vec<EpochRecord>,
}

/// Trains the active prompt and `head` on `task` with the base model and all
/// earlier prompts frozen, then folds the prompt in and freezes it.
pub fn train_task(
    model: &mut Encoder<f32>,
    stack: &mut ProgressiveStack,
    task: &Task,
    head: &mut ClassificationHead<f32>,
    cfg: &TrainRunConfig,
) -> Result<TaskOutcome> {
    if !model.is_frozen() {
        return Err(Error::BaseNotFrozen);
    }
    let ProgressiveStack { frozen, active } = &mut *stack;
    let active = active.as_mut().ok_or(Error::NoActivePrompt)?;
    let history = {
        let mut obj = StageObjective {
            model,
            active: Some(active),
            prefix: frozen.iter().rev().collect(),
            head,
            val: &task.val,
            seen: Vec::new(),
        };
        train::fit(&mut obj, &task.train, cfg)?
    };
    stack.finish_active()?;
    Ok(TaskOutcome { history })
}

/// Predicted class of `tokens` for a task, using only the prompts up to and
/// including that task's own.
pub fn predict(
    model: &Encoder<f32>,
    stack: &ProgressiveStack,
    task_id: usize,
    head: &ClassificationHead<f32>,
    tokens: &[usize],
) -> Result<usize> {
    let prefix = stack.prefix_for(task_id)?;
    train::predict(model, &prefix, head, tokens)
}

pub fn evaluate(
    model: &Encoder<f32>,
    stack: &ProgressiveStack,
    task_id: usize,
    head: &ClassificationHead<f32>,
    examples: &[Example],
) -> Result<f64> {
    let prefix = stack.prefix_for(task_id)?;
    train::accuracy(model, &prefix, head, examples)
}
