//! Subcommand implementations behind the `pplab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::{self, export, sign_test, Alternative, PromptAttentionMatrix, SignTest};
use crate::config::Config;
use crate::data::{self, jsonl, TaskSpec};
use crate::error::{Error, Result};
use crate::harness::registry::{self, build_task, sequence_tasks};
use crate::harness::{run_sequence, MethodKind, ResultMatrix, RunOutput};
use crate::model::Encoder;
use crate::persist::Checkpoint;
use crate::pretrain::{pretrain_base, PretrainReport};
use crate::seed;
use crate::train;

/// Training examples per class for a transfer target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shots {
    PerClass(usize),
    All,
}

impl FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Shots::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Shots::PerClass(n)),
            _ => Err(Error::Config(format!("shots must be a positive integer or \"all\", got {s:?}"))),
        }
    }
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shots::PerClass(n) => write!(f, "{n}"),
            Shots::All => f.write_str("all"),
        }
    }
}

fn load_base(cfg: &Config) -> Result<Encoder<f32>> {
    let ck = Checkpoint::load(&cfg.paths.base_checkpoint)?;
    if ck.model.config != cfg.model {
        return Err(Error::Config(format!(
            "{} was built for a different [model] section",
            cfg.paths.base_checkpoint.display()
        )));
    }
    Ok(ck.model)
}

/// Pretrains the base encoder and writes it to `paths.base_checkpoint`.
pub fn cmd_pretrain(config: &Path) -> Result<(PathBuf, PretrainReport)> {
    let cfg = Config::load(config)?;
    let (model, report) = pretrain_base(&cfg.model, &cfg.pretrain)?;
    let ck = Checkpoint {
        model,
        prompts: Vec::new(),
        heads: Vec::new(),
        seeds: vec![("pretrain".into(), cfg.pretrain.seed)],
    };
    ck.save(&cfg.paths.base_checkpoint)?;
    Ok((cfg.paths.base_checkpoint.clone(), report))
}

#[derive(Clone, Debug)]
pub struct RunArgs {
    pub config: PathBuf,
    pub order: String,
    pub method: MethodKind,
    pub samples_per_class: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub matrix: ResultMatrix,
    pub max_epochs: usize,
}

fn metrics_rows(m: &ResultMatrix) -> Result<Vec<Vec<String>>> {
    let mut rows = vec![vec!["average_accuracy".to_string(), export::format_g9(m.average_accuracy()?)]];
    if m.values.len() > 1 {
        rows.push(vec!["backward_transfer".into(), export::format_g9(m.backward_transfer()?)]);
        if m.baseline.is_some() {
            rows.push(vec!["forward_transfer".into(), export::format_g9(m.forward_transfer()?)]);
        }
    }
    Ok(rows)
}

fn write_run(dir: &Path, out: &RunOutput, tasks: &[data::Task], seeds: Vec<(String, u64)>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &out.matrix;
    export::write_matrix_csv(&dir.join("R.csv"), &m.task_names, &m.values)?;
    if let Some(b) = &m.baseline {
        export::write_matrix_csv(&dir.join("baseline.csv"), &m.task_names, std::slice::from_ref(b))?;
    }
    export::write_csv(
        &dir.join("metrics.csv"),
        &["metric".into(), "value".into()],
        &metrics_rows(m)?,
    )?;
    let mut log = Vec::new();
    for s in &out.logs {
        for r in &s.history {
            log.push(vec![
                s.stage.to_string(),
                s.task.clone(),
                r.epoch.to_string(),
                export::format_g9(r.train_loss),
                export::format_g9(r.val_accuracy),
            ]);
        }
    }
    export::write_csv(
        &dir.join("stages.csv"),
        &["stage", "task", "epoch", "train_loss", "val_accuracy"].map(String::from),
        &log,
    )?;
    let heads = tasks
        .iter()
        .filter_map(|t| out.learner.heads.get(&t.id).cloned())
        .collect();
    Checkpoint {
        model: out.learner.model.clone(),
        prompts: out.learner.final_prompts()?,
        heads,
        seeds,
    }
    .save(&dir.join("checkpoint.bin"))?;
    for t in tasks {
        let d = dir.join("data").join(&t.name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        jsonl::save_jsonl(&t.train, &d.join("train.jsonl"))?;
        jsonl::save_jsonl(&t.val, &d.join("val.jsonl"))?;
        jsonl::save_jsonl(&t.test, &d.join("test.jsonl"))?;
    }
    Ok(())
}

/// Runs one method over a task order and writes the result matrix,
/// metrics, per-epoch logs, final checkpoint and the generated data.
pub fn cmd_run(args: &RunArgs) -> Result<RunSummary> {
    let cfg = Config::load(&args.config)?;
    let seq = cfg.order(&args.order)?;
    let base = load_base(&cfg)?;
    let tasks = sequence_tasks(&seq, cfg.model.vocab_size, &cfg.tasks, args.samples_per_class)?;
    let mut mcfg = cfg.train.clone();
    if let Some(s) = args.seed {
        mcfg.seed = s;
    }
    let per_class = args.samples_per_class.unwrap_or(cfg.tasks.train_per_class);
    if let Some(e) = cfg.schedule.epochs_for(per_class) {
        mcfg.max_epochs = e;
    }
    let out = run_sequence(&base, &tasks, args.method, &mcfg)?;
    let samples = args.samples_per_class.map_or("full".to_string(), |n| n.to_string());
    let dir = args.out.clone().unwrap_or_else(|| {
        cfg.paths
            .results_dir
            .join(format!("{}_{}_{}_s{}", seq.name, args.method, samples, mcfg.seed))
    });
    let seeds = vec![("train".into(), mcfg.seed), ("tasks".into(), cfg.tasks.seed)];
    write_run(&dir, &out, &tasks, seeds)?;
    Ok(RunSummary {
        dir,
        matrix: out.matrix,
        max_epochs: mcfg.max_epochs,
    })
}

/// Loads every `<dataset_dir>/*/test.jsonl`, in directory-name order.
pub fn load_probes(dataset_dir: &Path, vocab_size: usize) -> Result<Vec<Vec<usize>>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dataset_dir)
        .map_err(|e| Error::io(dataset_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("test.jsonl").is_file())
        .collect();
    dirs.sort();
    let mut probes = Vec::new();
    for d in dirs {
        probes.extend(jsonl::load_jsonl(&d.join("test.jsonl"), vocab_size)?.into_iter().map(|e| e.tokens));
    }
    if probes.is_empty() {
        return Err(Error::Insufficient(format!(
            "no */test.jsonl probe examples under {}",
            dataset_dir.display()
        )));
    }
    Ok(probes)
}

fn prompt_name(task_id: usize) -> String {
    registry::benchmark_tasks()
        .get(task_id)
        .map_or_else(|| format!("task{task_id}"), |t| t.name.to_string())
}

/// Prompt-to-prompt attention of a checkpoint's stack, written as CSV.
pub fn cmd_attn(
    checkpoint: &Path,
    dataset_dir: &Path,
    layer: Option<usize>,
    out: Option<&Path>,
) -> Result<(PathBuf, PromptAttentionMatrix)> {
    let ck = Checkpoint::load(checkpoint)?;
    let probes = load_probes(dataset_dir, ck.model.config.vocab_size)?;
    let names = ck.prompts.iter().map(|p| prompt_name(p.task_id)).collect();
    let m = analysis::prompt_attention_matrix(&ck.model, &ck.prompts, names, &probes, layer)?;
    let path = out.map_or_else(
        || checkpoint.parent().unwrap_or(Path::new("")).join("attention.csv"),
        Path::to_path_buf,
    );
    analysis::export_csv(&m, &path)?;
    Ok((path, m))
}

#[derive(Clone, Debug)]
pub struct TransferArgs {
    pub config: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
    pub shots: Shots,
    pub seeds: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferRow {
    pub seed: u64,
    pub single: f64,
    pub progressive: f64,
}

impl TransferRow {
    pub fn relative_improvement(&self) -> f64 {
        (self.progressive - self.single) / self.single
    }
}

#[derive(Clone, Debug)]
pub struct TransferReport {
    pub path: PathBuf,
    pub rows: Vec<TransferRow>,
    pub one_sided: SignTest,
    pub two_sided: SignTest,
}

fn load_spec(path: &Path) -> Result<TaskSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: TaskSpec =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    spec.validate()?;
    Ok(spec)
}

/// One seed of the pair experiment: target accuracy of a single prompt of
/// twice the length versus a progressive stack trained source-then-target.
pub fn transfer_pair_seed(
    base: &Encoder<f32>,
    cfg: &Config,
    source: &TaskSpec,
    target: &TaskSpec,
    shots: Shots,
    seed_value: u64,
) -> Result<TransferRow> {
    let m = cfg.train.prompt_length;
    let mut src = source.clone();
    src.seed = seed::derive(source.seed, "pair", seed_value);
    let mut tgt = target.clone();
    tgt.seed = seed::derive(target.seed, "pair", seed_value);
    tgt.parent = Some(Box::new(src.clone()));
    tgt.validate()?;
    let n = match shots {
        Shots::PerClass(n) => Some(n),
        Shots::All => None,
    };
    let source_task = build_task(0, "source", &src, None)?;
    let target_task = build_task(1, "target", &tgt, n)?;

    let text = tgt.sequence_length.max(src.sequence_length);
    let total = 1 + 2 * m + text;
    if total > base.config.max_seq_len {
        return Err(Error::ComposeOverflow {
            prompt: 2 * m,
            text,
            total,
            max: base.config.max_seq_len,
        });
    }

    let mut mcfg = cfg.train.clone();
    mcfg.seed = seed_value;
    mcfg.baseline = false;
    let per_class = n.unwrap_or(tgt.train_size / tgt.num_classes.max(1));
    if let Some(e) = cfg.schedule.epochs_for(per_class) {
        mcfg.max_epochs = e;
    }
    let mut single_cfg = mcfg.clone();
    single_cfg.prompt_length = 2 * m;
    let single = run_sequence(base, std::slice::from_ref(&target_task), MethodKind::PerTaskPrompts, &single_cfg)?;
    let prog = run_sequence(
        base,
        &[source_task, target_task],
        MethodKind::Progressive,
        &mcfg,
    )?;
    Ok(TransferRow {
        seed: seed_value,
        single: single.matrix.values[0][0],
        progressive: prog.matrix.values[1][1],
    })
}

pub fn cmd_transfer_pair(args: &TransferArgs) -> Result<TransferReport> {
    if args.seeds == 0 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }
    let cfg = Config::load(&args.config)?;
    let base = load_base(&cfg)?;
    let source = load_spec(&args.source)?;
    let target = load_spec(&args.target)?;
    let mut rows = Vec::new();
    for s in 0..args.seeds as u64 {
        rows.push(transfer_pair_seed(&base, &cfg, &source, &target, args.shots, args.seed + s)?);
    }
    let diffs: Vec<f64> = rows.iter().map(|r| r.progressive - r.single).collect();
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| cfg.paths.results_dir.join(format!("transfer_{}.csv", args.shots)));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                args.shots.to_string(),
                export::format_g9(r.single),
                export::format_g9(r.progressive),
                export::format_g9(r.relative_improvement()),
            ]
        })
        .collect();
    export::write_csv(
        &path,
        &["seed", "shots", "single_accuracy", "progressive_accuracy", "relative_improvement"].map(String::from),
        &table,
    )?;
    Ok(TransferReport {
        path,
        rows,
        one_sided: sign_test(&diffs, Alternative::Greater),
        two_sided: sign_test(&diffs, Alternative::TwoSided),
    })
}

/// Accuracy of a checkpoint's task `task_id` on a JSONL file, using the
/// prompts up to and including that task's own.
pub fn checkpoint_accuracy(ck: &Checkpoint, task_id: usize, path: &Path) -> Result<f64> {
    let examples = jsonl::load_jsonl(path, ck.model.config.vocab_size)?;
    let k = ck
        .prompts
        .iter()
        .position(|p| p.task_id == task_id)
        .ok_or(Error::UnknownTask(task_id))?;
    let head = ck
        .heads
        .iter()
        .find(|h| h.task_id == task_id)
        .ok_or(Error::UnknownTask(task_id))?;
    let prefix: Vec<_> = ck.prompts[..=k].iter().rev().collect();
    train::accuracy(&ck.model, &prefix, head, &examples)
}
