use std::path::{Path, PathBuf};

use pplab::analysis::read_matrix_csv;
use pplab::cli::{self, RunArgs};
use pplab::harness::MethodKind;
use pplab::persist::Checkpoint;
use pplab::Error;

const CONFIG: &str = r#"
[model]
vocab_size = 64
embed_dim = 16
num_layers = 1
num_heads = 2
ffn_dim = 32
max_seq_len = 48

[pretrain]
tasks = 2
examples_per_task = 40
heldout_per_task = 10
tokens_per_class = 4
sequence_length = 8
max_prefix = 6
max_epochs = 2

[tasks]
tokens_per_class = 4
noise_rate = 0.4
sequence_length = 8
train_per_class = 12
val_per_class = 4
test_per_class = 6

[train]
prompt_length = 2
patience = 1

[orders]
mini = ["ag", "yelp", "amazon"]
solo = ["boolq"]
"#;

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    cli::cmd_pretrain(&cfg).unwrap();
    (dir, cfg)
}

fn args(cfg: &Path, order: &str, samples: Option<usize>) -> RunArgs {
    RunArgs {
        config: cfg.to_path_buf(),
        order: order.into(),
        method: MethodKind::Progressive,
        samples_per_class: samples,
        seed: Some(0),
        out: None,
    }
}

#[test]
fn pretrained_base_is_frozen_and_reproducible() {
    let (dir, cfg) = setup();
    let first = std::fs::read(dir.path().join("base.ckpt")).unwrap();
    let ck = Checkpoint::load(&dir.path().join("base.ckpt")).unwrap();
    assert_eq!(ck.model.trainable_count(), 0);
    assert!(ck.prompts.is_empty());
    cli::cmd_pretrain(&cfg).unwrap();
    assert_eq!(std::fs::read(dir.path().join("base.ckpt")).unwrap(), first);
}

#[test]
fn few_shot_runs_get_more_epochs() {
    let (_dir, cfg) = setup();
    let few = cli::cmd_run(&args(&cfg, "mini", Some(20))).unwrap();
    let many = cli::cmd_run(&args(&cfg, "mini", Some(1000))).unwrap();
    assert_eq!((few.max_epochs, many.max_epochs), (300, 40));
    assert_eq!(few.matrix.backward_transfer().unwrap(), 0.0);
    assert_eq!(many.matrix.backward_transfer().unwrap(), 0.0);
    assert!(few.dir.ends_with("mini_progressive_20_s0"));
    assert!(many.dir.join("stages.csv").is_file());
}

#[test]
fn run_writes_the_documented_layout() {
    let (_dir, cfg) = setup();
    let s = cli::cmd_run(&args(&cfg, "mini", None)).unwrap();
    assert!(s.dir.ends_with("mini_progressive_full_s0"));
    for f in ["R.csv", "baseline.csv", "metrics.csv", "stages.csv", "checkpoint.bin", "data/ag/test.jsonl"] {
        assert!(s.dir.join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(s.dir.join("metrics.csv")).unwrap();
    let names: Vec<&str> = metrics.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["metric", "average_accuracy", "backward_transfer", "forward_transfer"]);
    let (header, r) = read_matrix_csv(&s.dir.join("R.csv")).unwrap();
    assert_eq!(header, ["ag", "yelp", "amazon"]);
    assert_eq!(r.len(), 3);
    let ck = Checkpoint::load(&s.dir.join("checkpoint.bin")).unwrap();
    assert_eq!(ck.prompts.iter().map(|p| p.task_id).collect::<Vec<_>>(), [0, 2, 1]);
    assert!(ck.prompts.iter().all(|p| p.frozen));
}

#[test]
fn unknown_names_list_the_choices() {
    let (_dir, cfg) = setup();
    let e = cli::cmd_run(&args(&cfg, "order-99", None)).unwrap_err();
    assert!(matches!(e, Error::UnknownName { .. }));
    let msg = e.to_string();
    assert!(msg.contains("order-1") && msg.contains("mini"), "{msg}");
    let e = "adapter".parse::<MethodKind>().unwrap_err().to_string();
    assert!(e.contains("progressive") && e.contains("finetune"), "{e}");
}

#[test]
fn attention_of_a_single_prompt_and_bad_layers() {
    let (dir, cfg) = setup();
    let s = cli::cmd_run(&args(&cfg, "solo", Some(5))).unwrap();
    let ck = s.dir.join("checkpoint.bin");
    let (path, m) = cli::cmd_attn(&ck, &s.dir.join("data"), None, None).unwrap();
    assert_eq!(m.values.len(), 1);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("boolq"));
    let v: f64 = lines.next().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&v));
    assert!(lines.next().is_none());

    assert!(matches!(
        cli::cmd_attn(&ck, &s.dir.join("data"), Some(1), None),
        Err(Error::LayerOutOfRange { layer: 1, layers: 1 })
    ));
    // The pretrained base has no prompts.
    assert!(cli::cmd_attn(&dir.path().join("base.ckpt"), &s.dir.join("data"), None, None).is_err());
    // Unwritable output path: a file stands where a directory should be.
    let blocked = dir.path().join("cfg.toml").join("attention.csv");
    let e = cli::cmd_attn(&ck, &s.dir.join("data"), None, Some(&blocked)).unwrap_err();
    assert!(e.to_string().contains("cfg.toml"), "{e}");
}

#[test]
fn transfer_budget_is_checked() {
    let (dir, cfg) = setup();
    let text = std::fs::read_to_string(&cfg).unwrap().replace("prompt_length = 2", "prompt_length = 20");
    let big = dir.path().join("big.toml");
    std::fs::write(&big, text).unwrap();
    let spec = "num_classes = 2\nvocab_size = 64\ntokens_per_class = 4\nnoise_rate = 0.4\n\
                sequence_length = 8\ntrain_size = 24\nval_size = 8\ntest_size = 12\nseed = 1\n";
    std::fs::write(dir.path().join("s.toml"), spec).unwrap();
    let e = cli::cmd_transfer_pair(&cli::TransferArgs {
        config: big,
        source: dir.path().join("s.toml"),
        target: dir.path().join("s.toml"),
        shots: cli::Shots::PerClass(2),
        seeds: 1,
        seed: 0,
        out: None,
    })
    .unwrap_err();
    assert!(matches!(e, Error::ComposeOverflow { total: 49, max: 48, .. }), "{e}");
}

#[test]
fn shipped_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = pplab::config::Config::load(&path).unwrap();
    assert_eq!(cfg.train.prompt_length, 8);
    assert!(cfg.paths.base_checkpoint.ends_with("runs/base.ckpt"));
    for name in ["short", "order-1", "order-4", "order-10"] {
        let seq = cfg.order(name).unwrap();
        assert!(1 + seq.tasks.len() * 8 + cfg.tasks.sequence_length <= cfg.model.max_seq_len, "{name}");
    }
}
