//! Desk-scale stand-ins for the text-classification benchmark: one
//! synthetic task per dataset (matching class counts) and the named task
//! orders.

use serde::{Deserialize, Serialize};

use crate::data::{self, Task, TaskSpec};
use crate::error::{Error, Result};
use crate::seed;

pub struct BenchmarkTask {
    pub name: &'static str,
    pub num_classes: usize,
    /// `(parent, relatedness)` for tasks that share class evidence.
    pub parent: Option<(&'static str, f64)>,
}

const TASKS: &[BenchmarkTask] = &[
    BenchmarkTask { name: "ag", num_classes: 4, parent: None },
    BenchmarkTask { name: "amazon", num_classes: 5, parent: None },
    BenchmarkTask { name: "yelp", num_classes: 5, parent: Some(("amazon", 0.8)) },
    BenchmarkTask { name: "db", num_classes: 14, parent: None },
    BenchmarkTask { name: "yahoo", num_classes: 10, parent: None },
    BenchmarkTask { name: "mnli", num_classes: 3, parent: None },
    BenchmarkTask { name: "qqp", num_classes: 2, parent: None },
    BenchmarkTask { name: "rte", num_classes: 2, parent: None },
    BenchmarkTask { name: "sst2", num_classes: 2, parent: Some(("imdb", 0.8)) },
    BenchmarkTask { name: "wic", num_classes: 2, parent: None },
    BenchmarkTask { name: "cb", num_classes: 3, parent: None },
    BenchmarkTask { name: "copa", num_classes: 2, parent: None },
    BenchmarkTask { name: "multirc", num_classes: 2, parent: None },
    BenchmarkTask { name: "boolq", num_classes: 2, parent: None },
    BenchmarkTask { name: "imdb", num_classes: 2, parent: None },
];

const ORDERS: &[(&str, &[&str])] = &[
    ("order-1", &["db", "amazon", "yahoo", "ag"]),
    ("order-2", &["db", "amazon", "ag", "yahoo"]),
    ("order-3", &["yahoo", "amazon", "ag", "db"]),
    ("order-4", &["ag", "yelp", "amazon", "yahoo", "db"]),
    ("order-5", &["yelp", "yahoo", "amazon", "db", "ag"]),
    ("order-6", &["db", "yahoo", "ag", "amazon", "yelp"]),
    ("order-7", &["yelp", "ag", "db", "amazon", "yahoo"]),
    (
        "order-8",
        &[
            "mnli", "cb", "wic", "copa", "qqp", "boolq", "rte", "imdb", "yelp", "amazon", "sst2", "db", "ag",
            "multirc", "yahoo",
        ],
    ),
    (
        "order-9",
        &[
            "multirc", "boolq", "wic", "mnli", "cb", "copa", "qqp", "rte", "imdb", "sst2", "db", "ag", "yelp",
            "amazon", "yahoo",
        ],
    ),
    (
        "order-10",
        &[
            "yelp", "amazon", "mnli", "cb", "copa", "qqp", "rte", "imdb", "sst2", "db", "ag", "yahoo", "multirc",
            "boolq", "wic",
        ],
    ),
];

pub fn benchmark_tasks() -> &'static [BenchmarkTask] {
    TASKS
}

pub fn order_names() -> Vec<&'static str> {
    ORDERS.iter().map(|(n, _)| *n).collect()
}

/// Index of a task in the registry; doubles as its task id.
pub fn task_id(name: &str) -> Result<usize> {
    TASKS.iter().position(|t| t.name == name).ok_or_else(|| Error::UnknownName {
        kind: "task",
        name: name.to_string(),
        valid: TASKS.iter().map(|t| t.name).collect::<Vec<_>>().join(", "),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub name: String,
    pub tasks: Vec<String>,
}

impl TaskSequence {
    pub fn new(name: impl Into<String>, tasks: Vec<String>) -> Result<Self> {
        let seq = Self {
            name: name.into(),
            tasks,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config(format!("order {} has no tasks", self.name)));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            task_id(t)?;
            if self.tasks[..i].contains(t) {
                return Err(Error::Config(format!("order {} repeats task {t}", self.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

pub fn task_order(name: &str) -> Result<TaskSequence> {
    let (n, tasks) = ORDERS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownName {
            kind: "order",
            name: name.to_string(),
            valid: order_names().join(", "),
        })?;
    TaskSequence::new(*n, tasks.iter().map(|t| t.to_string()).collect())
}

/// Generation settings shared by every benchmark task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskDefaults {
    pub tokens_per_class: usize,
    pub noise_rate: f64,
    pub sequence_length: usize,
    /// Pool of training examples per class before any few-shot subsampling.
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for TaskDefaults {
    fn default() -> Self {
        Self {
            tokens_per_class: 8,
            noise_rate: 0.7,
            sequence_length: 16,
            train_per_class: 100,
            val_per_class: 20,
            test_per_class: 50,
            seed: 0,
        }
    }
}

/// Generator spec of a benchmark task (parents resolved recursively).
pub fn task_spec(name: &str, vocab_size: usize, d: &TaskDefaults, train_per_class: usize) -> Result<TaskSpec> {
    let t = &TASKS[task_id(name)?];
    let parent = match t.parent {
        Some((p, _)) => Some(Box::new(task_spec(p, vocab_size, d, d.train_per_class)?)),
        None => None,
    };
    let spec = TaskSpec {
        num_classes: t.num_classes,
        vocab_size,
        tokens_per_class: d.tokens_per_class,
        noise_rate: d.noise_rate,
        relatedness: t.parent.map_or(0.0, |(_, r)| r),
        parent,
        sequence_length: d.sequence_length,
        train_size: train_per_class * t.num_classes,
        val_size: d.val_per_class * t.num_classes,
        test_size: d.test_per_class * t.num_classes,
        seed: seed::derive(d.seed, name, 0),
    };
    spec.validate()?;
    Ok(spec)
}

/// Generates a task, optionally keeping exactly `shots` training examples
/// per class.
pub fn build_task(id: usize, name: &str, spec: &TaskSpec, shots: Option<usize>) -> Result<Task> {
    let mut spec = spec.clone();
    if let Some(n) = shots {
        // Oversample the pool so every class surely has `n` examples.
        spec.train_size = spec.train_size.max(spec.num_classes * (2 * n + 20));
    }
    let mut task = data::generate_task(id, name, &spec)?;
    if let Some(n) = shots {
        task.train = data::subsample_per_class(&task.train, task.num_classes, n, seed::derive(spec.seed, "shots", n as u64))?;
    }
    Ok(task)
}

/// All tasks of a sequence, in order.
pub fn sequence_tasks(
    seq: &TaskSequence,
    vocab_size: usize,
    d: &TaskDefaults,
    shots: Option<usize>,
) -> Result<Vec<Task>> {
    seq.tasks
        .iter()
        .map(|name| {
            let spec = task_spec(name, vocab_size, d, d.train_per_class)?;
            build_task(task_id(name)?, name, &spec, shots)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_resolve() {
        for name in order_names() {
            let seq = task_order(name).unwrap();
            assert!(seq.len() == 4 || seq.len() == 5 || seq.len() == 15, "{name}");
        }
        assert_eq!(task_order("order-4").unwrap().tasks, ["ag", "yelp", "amazon", "yahoo", "db"]);
    }

    #[test]
    fn unknown_order_lists_valid_names() {
        let err = task_order("order-99").unwrap_err().to_string();
        assert!(err.contains("order-99") && err.contains("order-1"), "{err}");
    }

    #[test]
    fn shots_are_exact() {
        let d = TaskDefaults::default();
        let spec = task_spec("ag", 256, &d, 10).unwrap();
        let task = build_task(0, "ag", &spec, Some(5)).unwrap();
        assert_eq!(data::class_counts(&task.train, 4), vec![5; 4]);
    }

    #[test]
    fn child_tasks_share_parent_evidence() {
        let d = TaskDefaults::default();
        let yelp = task_spec("yelp", 256, &d, 10).unwrap();
        assert_eq!(yelp.relatedness, 0.8);
        assert_eq!(yelp.parent.as_ref().unwrap().num_classes, 5);
    }
}
