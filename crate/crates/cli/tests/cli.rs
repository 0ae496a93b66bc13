use std::path::Path;
use std::process::{Command, Output};

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
max_epochs = 2
patience = 2

[orders]
mini = ["ag", "yelp", "amazon"]
"#;

fn pplab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pplab"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = setup();
    assert_eq!(code(&pplab(dir.path(), &[])), 1);
    assert_eq!(code(&pplab(dir.path(), &["frobnicate"])), 1);
    let o = pplab(dir.path(), &["run", "c.toml", "--order", "mini", "--method", "adapter"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("progressive"), "{}", stderr(&o));
    assert!(pplab(dir.path(), &["--help"]).status.success());
}

#[test]
fn bad_thread_count_is_a_usage_error() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_pplab"))
        .current_dir(dir.path())
        .env("PPLAB_THREADS", "many")
        .args(["pretrain", "c.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("PPLAB_THREADS"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = setup();
    assert_eq!(code(&pplab(dir.path(), &["pretrain", "missing.toml"])), 2);

    let broken = CONFIG.replace("embed_dim = 16\n", "");
    std::fs::write(dir.path().join("broken.toml"), broken).unwrap();
    let o = pplab(dir.path(), &["pretrain", "broken.toml"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("embed_dim"), "{}", stderr(&o));

    // No base checkpoint yet.
    let o = pplab(dir.path(), &["run", "c.toml", "--order", "mini", "--method", "progressive"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn pipeline_end_to_end() {
    let dir = setup();
    let d = dir.path();
    let o = pplab(d, &["pretrain", "c.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("held-out accuracy"));
    assert!(d.join("base.ckpt").is_file());

    let o = pplab(d, &["run", "c.toml", "--order", "nope", "--method", "progressive"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("order-1"), "{}", stderr(&o));

    let run = ["run", "c.toml", "--order", "mini", "--method", "progressive", "--samples-per-class", "4", "--seed", "3"];
    let o = pplab(d, &run);
    assert!(o.status.success(), "{}", stderr(&o));
    let res = d.join("results/mini_progressive_4_s3");
    let metrics = std::fs::read_to_string(res.join("metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l == "backward_transfer,0"), "{metrics}");
    let r_first = std::fs::read(res.join("R.csv")).unwrap();

    let o = pplab(d, &run);
    assert!(o.status.success());
    assert_eq!(std::fs::read(res.join("R.csv")).unwrap(), r_first);

    let ck = res.join("checkpoint.bin");
    let data = res.join("data");
    let o = pplab(d, &["attn", ck.to_str().unwrap(), data.to_str().unwrap(), "--layer", "1"]);
    assert_eq!(code(&o), 2);
    let o = pplab(d, &["attn", ck.to_str().unwrap(), data.to_str().unwrap(), "--layer", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(res.join("attention.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "ag,yelp,amazon");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().flatten().all(|x| (0.0..=1.0).contains(x)));
}

#[test]
fn transfer_pair_writes_comparison_csv() {
    let dir = setup();
    let d = dir.path();
    assert!(pplab(d, &["pretrain", "c.toml"]).status.success());
    let spec = "num_classes = 2\nvocab_size = 64\ntokens_per_class = 4\nnoise_rate = 0.4\n\
                sequence_length = 8\ntrain_size = 24\nval_size = 8\ntest_size = 12\n";
    std::fs::write(d.join("s.toml"), format!("{spec}seed = 1\n")).unwrap();
    std::fs::write(d.join("t.toml"), format!("{spec}seed = 2\nrelatedness = 0.5\n")).unwrap();
    let args = ["transfer-pair", "c.toml", "--source", "s.toml", "--target", "t.toml", "--shots", "2", "--seeds", "2"];
    let o = pplab(d, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = d.join("results/transfer_2.csv");
    let first = std::fs::read_to_string(&path).unwrap();
    assert!(first.starts_with("seed,shots,single_accuracy,progressive_accuracy,relative_improvement\n"));
    assert_eq!(first.lines().count(), 3);
    assert!(pplab(d, &args).status.success());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), first);

    let o = pplab(d, &["transfer-pair", "c.toml", "--source", "s.toml", "--target", "t.toml", "--shots", "0"]);
    assert_eq!(code(&o), 1);
}
