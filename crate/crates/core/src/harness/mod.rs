//! Runs a method over a task sequence and records the result matrix.

pub mod metrics;
pub mod registry;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{ClassificationHead, Encoder};
use crate::progressive::{self, ProgressiveStack};
use crate::prompts::{init_prompt, ResidualReparam, SoftPrompt};
use crate::seed;
use crate::train::{self, EpochRecord, StageObjective, TrainRunConfig};

pub use metrics::{average_accuracy, backward_transfer, forward_transfer};
pub use registry::{task_order, TaskDefaults, TaskSequence};

/// Task id used for the single prompt of the shared-prompt method.
pub const SHARED_PROMPT_ID: usize = 9999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    Progressive,
    PerTaskPrompts,
    SharedPrompt,
    Finetune,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::Progressive,
        MethodKind::PerTaskPrompts,
        MethodKind::SharedPrompt,
        MethodKind::Finetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Progressive => "progressive",
            MethodKind::PerTaskPrompts => "per-task",
            MethodKind::SharedPrompt => "shared",
            MethodKind::Finetune => "finetune",
        }
    }

    fn uses_prompts(self) -> bool {
        self != MethodKind::Finetune
    }

    /// Whether early stopping watches every seen task instead of just the
    /// current one.
    fn monitors_seen(self) -> bool {
        matches!(self, MethodKind::SharedPrompt | MethodKind::Finetune)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "method",
                name: s.to_string(),
                valid: MethodKind::ALL.map(|m| m.name()).join(", "),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub prompt_length: usize,
    /// Length of the single shared prompt; defaults to ten task prompts.
    pub shared_prompt_length: Option<usize>,
    pub reparam: bool,
    /// MLP width; defaults to the model width.
    pub mlp_hidden: Option<usize>,
    pub prompt_learning_rate: f64,
    pub finetune_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Also train single-task baselines (needed for forward transfer).
    pub baseline: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            prompt_length: 20,
            shared_prompt_length: None,
            reparam: true,
            mlp_hidden: None,
            prompt_learning_rate: 1e-2,
            finetune_learning_rate: 1e-3,
            batch_size: 8,
            max_epochs: 40,
            patience: 5,
            seed: 0,
            baseline: true,
        }
    }
}

impl MethodConfig {
    pub fn shared_len(&self) -> usize {
        self.shared_prompt_length.unwrap_or(10 * self.prompt_length)
    }

    fn stage(&self, method: MethodKind, task_id: usize) -> TrainRunConfig {
        TrainRunConfig {
            learning_rate: match method {
                MethodKind::Finetune => self.finetune_learning_rate,
                _ => self.prompt_learning_rate,
            },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            early_stop_patience: self.patience,
            seed: seed::derive(self.seed, "stage", task_id as u64),
        }
    }
}

/// State of one method partway through (or after) a sequence.
#[derive(Clone, Debug)]
pub struct Learner {
    pub method: MethodKind,
    pub config: MethodConfig,
    pub model: Encoder<f32>,
    pub stack: ProgressiveStack,
    pub prompts: BTreeMap<usize, SoftPrompt<f32>>,
    pub shared: Option<SoftPrompt<f32>>,
    pub heads: BTreeMap<usize, ClassificationHead<f32>>,
}

impl Learner {
    /// Prompt methods require a frozen base; finetuning trains a copy.
    pub fn new(base: &Encoder<f32>, method: MethodKind, config: MethodConfig) -> Result<Self> {
        let mut model = base.clone();
        if method.uses_prompts() {
            if !model.is_frozen() {
                return Err(Error::BaseNotFrozen);
            }
        } else {
            model.set_trainable(true);
        }
        Ok(Self {
            method,
            config,
            model,
            stack: ProgressiveStack::new(),
            prompts: BTreeMap::new(),
            shared: None,
            heads: BTreeMap::new(),
        })
    }

    fn fresh_head(&self, task: &Task) -> ClassificationHead<f32> {
        ClassificationHead::new(
            task.id,
            task.num_classes,
            self.model.embed_dim(),
            seed::derive(self.config.seed, "head", task.id as u64),
        )
    }

    fn fresh_prompt(&self, task_id: usize, length: usize) -> Result<SoftPrompt<f32>> {
        let s = seed::derive(self.config.seed, "prompt", task_id as u64);
        let p = init_prompt(task_id, length, &self.model.token_embedding.data, s)?;
        Ok(if self.config.reparam {
            let e = self.model.embed_dim();
            p.with_reparam(ResidualReparam::new(task_id, e, self.config.mlp_hidden.unwrap_or(e), s))
        } else {
            p
        })
    }

    /// Trains on `task`; `seen` are the earlier tasks of the sequence.
    pub fn train(&mut self, task: &Task, seen: &[Task]) -> Result<Vec<EpochRecord>> {
        if self.heads.contains_key(&task.id) {
            return Err(Error::Config(format!("task {} was already trained", task.name)));
        }
        let cfg = self.config.stage(self.method, task.id);
        let mut head = self.fresh_head(task);
        let history = match self.method {
            MethodKind::Progressive => {
                let p = self.fresh_prompt(task.id, self.config.prompt_length)?;
                self.stack.push_active(p)?;
                progressive::train_task(&mut self.model, &mut self.stack, task, &mut head, &cfg)?.history
            }
            MethodKind::PerTaskPrompts => {
                let mut p = self.fresh_prompt(task.id, self.config.prompt_length)?;
                let history = train::fit(
                    &mut StageObjective {
                        model: &mut self.model,
                        active: Some(&mut p),
                        prefix: Vec::new(),
                        head: &mut head,
                        val: &task.val,
                        seen: Vec::new(),
                    },
                    &task.train,
                    &cfg,
                )?;
                p.fold_in()?;
                self.prompts.insert(task.id, p);
                history
            }
            MethodKind::SharedPrompt | MethodKind::Finetune => {
                if self.method == MethodKind::SharedPrompt && self.shared.is_none() {
                    self.shared = Some(self.fresh_prompt(SHARED_PROMPT_ID, self.config.shared_len())?);
                }
                let mut seen_pairs = Vec::new();
                if self.method.monitors_seen() {
                    for t in seen {
                        let h = self.heads.get(&t.id).ok_or(Error::UnknownTask(t.id))?;
                        seen_pairs.push((h, t.val.as_slice()));
                    }
                }
                train::fit(
                    &mut StageObjective {
                        model: &mut self.model,
                        active: self.shared.as_mut(),
                        prefix: Vec::new(),
                        head: &mut head,
                        val: &task.val,
                        seen: seen_pairs,
                    },
                    &task.train,
                    &cfg,
                )?
            }
        };
        head.set_trainable(false);
        self.heads.insert(task.id, head);
        Ok(history)
    }

    /// Test accuracy on `task`. A task not trained yet is scored with the
    /// head (and prompt) it would start training from.
    pub fn evaluate(&self, task: &Task) -> Result<f64> {
        let fresh_head;
        let head = match self.heads.get(&task.id) {
            Some(h) => h,
            None => {
                fresh_head = self.fresh_head(task);
                &fresh_head
            }
        };
        let fresh_prompt;
        let prompts: Vec<&SoftPrompt<f32>> = match self.method {
            MethodKind::Progressive => {
                if self.heads.contains_key(&task.id) {
                    self.stack.prefix_for(task.id)?
                } else {
                    fresh_prompt = self.fresh_prompt(task.id, self.config.prompt_length)?;
                    std::iter::once(&fresh_prompt).chain(self.stack.full_prefix()).collect()
                }
            }
            MethodKind::PerTaskPrompts => match self.prompts.get(&task.id) {
                Some(p) => vec![p],
                None => {
                    fresh_prompt = self.fresh_prompt(task.id, self.config.prompt_length)?;
                    vec![&fresh_prompt]
                }
            },
            MethodKind::SharedPrompt => match &self.shared {
                Some(p) => vec![p],
                None => {
                    fresh_prompt = self.fresh_prompt(SHARED_PROMPT_ID, self.config.shared_len())?;
                    vec![&fresh_prompt]
                }
            },
            MethodKind::Finetune => Vec::new(),
        };
        train::accuracy(&self.model, &prompts, head, &task.test)
    }

    /// Frozen prompts in training order (the shared prompt is folded in).
    pub fn final_prompts(&self) -> Result<Vec<SoftPrompt<f32>>> {
        Ok(match self.method {
            MethodKind::Progressive => self.stack.frozen().to_vec(),
            MethodKind::PerTaskPrompts => {
                let mut v: Vec<SoftPrompt<f32>> = Vec::new();
                for id in self.heads.keys() {
                    if let Some(p) = self.prompts.get(id) {
                        v.push(p.clone());
                    }
                }
                v
            }
            MethodKind::SharedPrompt => match &self.shared {
                Some(p) => {
                    let mut p = p.clone();
                    p.fold_in()?;
                    vec![p]
                }
                None => Vec::new(),
            },
            MethodKind::Finetune => Vec::new(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultMatrix {
    pub task_names: Vec<String>,
    /// `values[i][j]`: accuracy on task `j` after stage `i`.
    pub values: Vec<Vec<f64>>,
    /// Single-task baseline accuracy per task, when computed.
    pub baseline: Option<Vec<f64>>,
}

impl ResultMatrix {
    pub fn average_accuracy(&self) -> Result<f64> {
        average_accuracy(&self.values)
    }

    pub fn backward_transfer(&self) -> Result<f64> {
        backward_transfer(&self.values)
    }

    pub fn forward_transfer(&self) -> Result<f64> {
        let b = self
            .baseline
            .as_ref()
            .ok_or_else(|| Error::Metric("no baseline accuracies".into()))?;
        forward_transfer(&self.values, b)
    }
}

#[derive(Clone, Debug)]
pub struct StageLog {
    pub stage: usize,
    pub task: String,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub matrix: ResultMatrix,
    pub logs: Vec<StageLog>,
    pub learner: Learner,
}

/// Trains `method` on `tasks` in order, scoring every task after every
/// stage. Stage failures are reported with their 1-based stage number.
pub fn run_sequence(base: &Encoder<f32>, tasks: &[Task], method: MethodKind, config: &MethodConfig) -> Result<RunOutput> {
    if tasks.is_empty() {
        return Err(Error::Config("empty task sequence".into()));
    }
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].iter().any(|u| u.id == t.id) {
            return Err(Error::Config(format!("task id {} appears twice", t.id)));
        }
    }
    if method == MethodKind::Progressive {
        let longest = tasks
            .iter()
            .flat_map(|t| t.train.iter().chain(&t.val).chain(&t.test))
            .map(|e| e.tokens.len())
            .max()
            .unwrap_or(0);
        let prompt = tasks.len() * config.prompt_length;
        let total = 1 + prompt + longest;
        if total > base.config.max_seq_len {
            return Err(Error::ComposeOverflow {
                prompt,
                text: longest,
                total,
                max: base.config.max_seq_len,
            });
        }
    }

    let mut learner = Learner::new(base, method, config.clone())?;
    let t = tasks.len();
    let mut values = Vec::with_capacity(t);
    let mut logs = Vec::with_capacity(t);
    for (i, task) in tasks.iter().enumerate() {
        let wrap = |e| Error::Stage {
            stage: i + 1,
            source: Box::new(e),
        };
        let history = learner.train(task, &tasks[..i]).map_err(wrap)?;
        logs.push(StageLog {
            stage: i + 1,
            task: task.name.clone(),
            history,
        });
        let row = tasks
            .iter()
            .map(|u| learner.evaluate(u))
            .collect::<Result<Vec<f64>>>()
            .map_err(wrap)?;
        values.push(row);
    }

    let baseline = if config.baseline {
        let single = exec::map_ordered(tasks, |task| -> Result<f64> {
            let mut l = Learner::new(base, method, config.clone())?;
            l.train(task, &[])?;
            l.evaluate(task)
        });
        Some(single.into_iter().collect::<Result<Vec<f64>>>()?)
    } else {
        None
    };

    Ok(RunOutput {
        matrix: ResultMatrix {
            task_names: tasks.iter().map(|t| t.name.clone()).collect(),
            values,
            baseline,
        },
        logs,
        learner,
    })
}
