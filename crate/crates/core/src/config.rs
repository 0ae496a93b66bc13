//! TOML run configuration.
//!
//! ```toml
//! [model]      # required: encoder shape
//! [pretrain]   # pretext-task pretraining
//! [tasks]      # synthetic task generation
//! [train]      # prompt / finetune training
//! [schedule]   # epochs by samples per class
//! [paths]      # base checkpoint and results directory
//! [orders]     # extra named task orders, e.g. mini = ["ag", "yelp"]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::registry::{self, TaskDefaults, TaskSequence};
use crate::harness::MethodConfig;
use crate::model::ModelConfig;
use crate::pretrain::PretrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub enabled: bool,
    /// `[min_samples_per_class, max_epochs]`, checked top to bottom.
    pub tiers: Vec<(usize, usize)>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            enabled: true,
            tiers: vec![(1000, 40), (200, 150), (0, 300)],
        }
    }
}

impl Schedule {
    pub fn epochs_for(&self, samples_per_class: usize) -> Option<usize> {
        if !self.enabled {
            return None;
        }
        self.tiers
            .iter()
            .find(|(min, _)| samples_per_class >= *min)
            .map(|(_, e)| *e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub base_checkpoint: PathBuf,
    pub results_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            base_checkpoint: PathBuf::from("base.ckpt"),
            results_dir: PathBuf::from("results"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub tasks: TaskDefaults,
    #[serde(default)]
    pub train: MethodConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub orders: BTreeMap<String, Vec<String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.model.validate()?;
        if cfg.train.prompt_length == 0 {
            return Err(Error::Config("train.prompt_length must be at least 1".into()));
        }
        for (name, tasks) in &cfg.orders {
            TaskSequence::new(name.clone(), tasks.clone())?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.base_checkpoint, &mut cfg.paths.results_dir] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// A built-in order or one from `[orders]`.
    pub fn order(&self, name: &str) -> Result<TaskSequence> {
        if let Some(tasks) = self.orders.get(name) {
            return TaskSequence::new(name, tasks.clone());
        }
        registry::task_order(name).map_err(|_| {
            let mut valid = registry::order_names().iter().map(|s| s.to_string()).collect::<Vec<_>>();
            valid.extend(self.orders.keys().cloned());
            Error::UnknownName {
                kind: "order",
                name: name.to_string(),
                valid: valid.join(", "),
            }
        })
    }
}
