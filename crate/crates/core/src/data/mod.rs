//! Synthetic token-classification tasks, the `t<N>` tokenizer and JSON Lines IO.
//!
//! Every class owns a small set of indicative tokens. An example draws its
//! label uniformly, then fills each position with a token from its class set
//! (probability `1 - noise_rate`) or a uniform vocabulary token. Child tasks
//! inherit a fraction `relatedness` of each class set from a parent task,
//! which is what makes transfer between tasks possible.

pub mod jsonl;

pub use jsonl::{load_jsonl, save_jsonl};

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub vocab_size: usize,
    /// Size of each class-indicative token set.
    pub tokens_per_class: usize,
    pub noise_rate: f64,
    /// Fraction of each class set shared with the parent's class set.
    #[serde(default)]
    pub relatedness: f64,
    #[serde(default)]
    pub parent: Option<Box<TaskSpec>>,
    pub sequence_length: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: usize,
    pub name: String,
    pub num_classes: usize,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::TaskSpec(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.tokens_per_class < 1 {
            return bad("tokens_per_class must be positive".into());
        }
        if self.sequence_length < 1 {
            return bad("sequence_length must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        if !(0.0..=1.0).contains(&self.relatedness) {
            return bad(format!("relatedness {} outside [0, 1]", self.relatedness));
        }
        if let Some(p) = &self.parent {
            p.validate()?;
            if p.vocab_size != self.vocab_size {
                return bad("parent uses a different vocabulary size".into());
            }
        }
        Ok(())
    }

    /// The disjoint class-indicative token sets, one per class.
    pub fn class_token_sets(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let n = self.tokens_per_class;
        let c = self.num_classes;
        let mut rng = seed::rng(self.seed, "class-tokens", 0);
        let Some(parent) = &self.parent else {
            if c * n > self.vocab_size {
                return Err(Error::TaskSpec(format!(
                    "vocabulary of {} too small for {c} disjoint sets of {n}",
                    self.vocab_size
                )));
            }
            let picks = sample(&mut rng, self.vocab_size, c * n).into_vec();
            return Ok(picks.chunks(n).map(|s| s.to_vec()).collect());
        };

        let parent_sets = parent.class_token_sets()?;
        let shared = ((self.relatedness * n as f64).round() as usize).min(n);
        let mut sets: Vec<Vec<usize>> = (0..c)
            .map(|k| match parent_sets.get(k) {
                Some(ps) => ps.iter().take(shared.min(ps.len())).copied().collect(),
                None => Vec::new(),
            })
            .collect();
        // Fresh tokens avoid every parent set and every kept token.
        let mut used: BTreeSet<usize> = parent_sets.iter().flatten().copied().collect();
        used.extend(sets.iter().flatten().copied());
        let needed: usize = sets.iter().map(|s| n - s.len()).sum();
        let pool: Vec<usize> = (0..self.vocab_size).filter(|t| !used.contains(t)).collect();
        if needed > pool.len() {
            return Err(Error::TaskSpec(format!(
                "vocabulary of {} too small: need {needed} fresh tokens, {} available",
                self.vocab_size,
                pool.len()
            )));
        }
        let fresh = sample(&mut rng, pool.len(), needed).into_vec();
        let mut it = fresh.into_iter().map(|i| pool[i]);
        for s in &mut sets {
            while s.len() < n {
                s.push(it.next().expect("enough fresh tokens"));
            }
        }
        Ok(sets)
    }
}

fn sample_split(
    spec: &TaskSpec,
    sets: &[Vec<usize>],
    split: u64,
    count: usize,
) -> Vec<Example> {
    let mut rng = seed::rng(spec.seed, "examples", split);
    (0..count)
        .map(|_| {
            let label = rng.gen_range(0..spec.num_classes);
            let set = &sets[label];
            let tokens = (0..spec.sequence_length)
                .map(|_| {
                    if rng.gen::<f64>() < spec.noise_rate {
                        rng.gen_range(0..spec.vocab_size)
                    } else {
                        set[rng.gen_range(0..set.len())]
                    }
                })
                .collect();
            Example { tokens, label }
        })
        .collect()
}

/// Generates all three splits; a pure function of the spec.
pub fn generate_task(id: usize, name: &str, spec: &TaskSpec) -> Result<Task> {
    let sets = spec.class_token_sets()?;
    Ok(Task {
        id,
        name: name.to_string(),
        num_classes: spec.num_classes,
        train: sample_split(spec, &sets, 0, spec.train_size),
        val: sample_split(spec, &sets, 1, spec.val_size),
        test: sample_split(spec, &sets, 2, spec.test_size),
    })
}

fn per_class_indices(examples: &[Example], classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, ex) in examples.iter().enumerate() {
        if ex.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                classes,
            });
        }
        by_class[ex.label].push(i);
    }
    Ok(by_class)
}

fn pick_per_class(
    examples: &[Example],
    classes: usize,
    per_class: usize,
    seed_value: u64,
    tag: &str,
) -> Result<Vec<bool>> {
    let by_class = per_class_indices(examples, classes)?;
    let mut chosen = vec![false; examples.len()];
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::Insufficient(format!(
                "class {c} has {} examples, {per_class} requested",
                idx.len()
            )));
        }
        let mut rng = seed::rng(seed_value, tag, c as u64);
        for k in sample(&mut rng, idx.len(), per_class) {
            chosen[idx[k]] = true;
        }
    }
    Ok(chosen)
}

/// Randomly moves exactly `per_class` examples of every class from `train`
/// into a validation split. Both outputs keep the input order.
pub fn make_validation_holdout(
    train: &[Example],
    classes: usize,
    per_class: usize,
    seed_value: u64,
) -> Result<(Vec<Example>, Vec<Example>)> {
    let chosen = pick_per_class(train, classes, per_class, seed_value, "holdout")?;
    let mut rest = Vec::new();
    let mut val = Vec::new();
    for (ex, is_val) in train.iter().zip(chosen) {
        if is_val {
            val.push(ex.clone());
        } else {
            rest.push(ex.clone());
        }
    }
    Ok((rest, val))
}

/// Keeps exactly `per_class` randomly chosen examples of every class.
pub fn subsample_per_class(
    examples: &[Example],
    classes: usize,
    per_class: usize,
    seed_value: u64,
) -> Result<Vec<Example>> {
    let chosen = pick_per_class(examples, classes, per_class, seed_value, "subsample")?;
    Ok(examples
        .iter()
        .zip(chosen)
        .filter(|(_, c)| *c)
        .map(|(e, _)| e.clone())
        .collect())
}

/// Number of examples of each class.
pub fn class_counts(examples: &[Example], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for ex in examples {
        if ex.label < classes {
            counts[ex.label] += 1;
        }
    }
    counts
}

/// Maps `"t<N>"` names separated by single spaces to ids.
pub fn tokenize(text: &str, vocab_size: usize) -> Result<Vec<usize>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(' ')
        .map(|name| {
            let digits = name
                .strip_prefix('t')
                .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                .filter(|d| *d == "0" || !d.starts_with('0'))
                .ok_or_else(|| Error::Token(name.to_string()))?;
            let id: usize = digits.parse().map_err(|_| Error::Token(name.to_string()))?;
            if id >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab: vocab_size,
                });
            }
            Ok(id)
        })
        .collect()
}

pub fn detokenize(tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|t| format!("t{t}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    pub(crate) fn spec(noise: f64, classes: usize) -> TaskSpec {
        TaskSpec {
            num_classes: classes,
            vocab_size: 64,
            tokens_per_class: 4,
            noise_rate: noise,
            relatedness: 0.0,
            parent: None,
            sequence_length: 12,
            train_size: 200,
            val_size: 40,
            test_size: 200,
            seed: 17,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(0.5, 3);
        assert_eq!(generate_task(0, "a", &s).unwrap(), generate_task(0, "a", &s).unwrap());
        let mut s2 = s.clone();
        s2.seed = 18;
        assert_ne!(generate_task(0, "a", &s).unwrap(), generate_task(0, "a", &s2).unwrap());
    }

    #[test]
    fn class_sets_are_disjoint() {
        let sets = spec(0.5, 5).class_token_sets().unwrap();
        let all: BTreeSet<usize> = sets.iter().flatten().copied().collect();
        assert_eq!(all.len(), 20);
    }

    #[test]
    fn full_relatedness_copies_parent_sets() {
        let parent = spec(0.5, 3);
        let mut child = spec(0.7, 3);
        child.seed = 99;
        child.relatedness = 1.0;
        child.parent = Some(Box::new(parent.clone()));
        assert_eq!(child.class_token_sets().unwrap(), parent.class_token_sets().unwrap());

        child.relatedness = 0.5;
        let cs = child.class_token_sets().unwrap();
        let ps = parent.class_token_sets().unwrap();
        for (c, p) in cs.iter().zip(&ps) {
            assert_eq!(&c[..2], &p[..2]);
            assert!(c[2..].iter().all(|t| !ps.iter().flatten().any(|x| x == t)));
        }
    }

    #[test]
    fn vocab_too_small_errors() {
        let mut s = spec(0.5, 5);
        s.vocab_size = 10;
        assert!(matches!(generate_task(0, "x", &s), Err(Error::TaskSpec(_))));
    }

    /// Classifies by counting tokens from each class set.
    fn counting_oracle(sets: &[Vec<usize>], ex: &Example) -> usize {
        let lookup: HashMap<usize, usize> = sets
            .iter()
            .enumerate()
            .flat_map(|(c, s)| s.iter().map(move |&t| (t, c)))
            .collect();
        let mut counts = vec![0usize; sets.len()];
        for t in &ex.tokens {
            if let Some(&c) = lookup.get(t) {
                counts[c] += 1;
            }
        }
        crate::model::argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
    }

    #[test]
    fn noiseless_two_class_is_perfectly_separable() {
        let s = spec(0.0, 2);
        let t = generate_task(0, "x", &s).unwrap();
        let sets = s.class_token_sets().unwrap();
        let correct = t.test.iter().filter(|e| counting_oracle(&sets, e) == e.label).count();
        assert_eq!(correct, t.test.len());
    }

    #[test]
    fn full_noise_is_label_independent() {
        let mut s = spec(1.0, 2);
        s.test_size = 4000;
        let t = generate_task(0, "x", &s).unwrap();
        let sets = s.class_token_sets().unwrap();
        let acc = t.test.iter().filter(|e| counting_oracle(&sets, e) == e.label).count() as f64
            / t.test.len() as f64;
        // chance 0.5, sd = sqrt(0.25 / 4000) ~ 0.0079
        assert!((acc - 0.5).abs() < 4.0 * 0.0079, "{acc}");
    }

    #[test]
    fn holdout_examples() {
        let t = generate_task(0, "x", &spec(0.5, 2)).unwrap();
        let (rest, val) = make_validation_holdout(&t.train, 2, 0, 1).unwrap();
        assert!(val.is_empty());
        assert_eq!(rest, t.train);

        let (rest, val) = make_validation_holdout(&t.train, 2, 5, 1).unwrap();
        assert_eq!(val.len(), 10);
        assert_eq!(class_counts(&val, 2), vec![5, 5]);
        let mut union: Vec<_> = rest.iter().chain(&val).cloned().collect();
        let mut orig = t.train.clone();
        let key = |e: &Example| (e.label, e.tokens.clone());
        union.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(union, orig);

        assert!(matches!(
            make_validation_holdout(&t.train, 2, 1000, 1),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("t0 t5 t5", 512).unwrap(), vec![0, 5, 5]);
        assert_eq!(tokenize("", 512).unwrap(), Vec::<usize>::new());
        assert!(matches!(
            tokenize("t999", 512),
            Err(Error::TokenOutOfRange { id: 999, .. })
        ));
        for bad in ["x1", "t", "t-1", "t01", "t1  t2", "t1 "] {
            assert!(tokenize(bad, 512).is_err(), "{bad}");
        }
        assert_eq!(detokenize(&[0, 5, 5]), "t0 t5 t5");
    }
}
