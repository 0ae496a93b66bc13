//! Sequential versus rayon-backed evaluation and per-example gradients.
//!
//! Build without default features to measure the fallback path on its own:
//! `cargo bench -p pplab --no-default-features`.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pplab::data::{generate_task, TaskSpec};
use pplab::exec;
use pplab::model::{ClassificationHead, Encoder, ModelConfig};
use pplab::numerics::Graph;
use pplab::prompts::{init_prompt, ResidualReparam};
use pplab::train::{forward_logits, predict};

fn setup() -> (Encoder<f32>, pplab::prompts::SoftPrompt<f32>, ClassificationHead<f32>, Vec<pplab::data::Example>) {
    let cfg = ModelConfig {
        vocab_size: 128,
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        ffn_dim: 64,
        max_seq_len: 64,
    };
    let mut model = Encoder::new(cfg, 0).unwrap();
    model.freeze_base();
    let prompt = init_prompt(0, 8, &model.token_embedding.data, 1)
        .unwrap()
        .with_reparam(ResidualReparam::new(0, 32, 32, 2));
    let head = ClassificationHead::new(0, 4, 32, 3);
    let spec = TaskSpec {
        num_classes: 4,
        vocab_size: 128,
        tokens_per_class: 8,
        noise_rate: 0.6,
        relatedness: 0.0,
        parent: None,
        sequence_length: 16,
        train_size: 64,
        val_size: 4,
        test_size: 4,
        seed: 9,
    };
    let task = generate_task(0, "bench", &spec).unwrap();
    (model, prompt, head, task.train)
}

fn bench(c: &mut Criterion) {
    let (model, prompt, head, examples) = setup();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());

    let mut group = c.benchmark_group("evaluate_64");
    group.bench_function(BenchmarkId::new("sequential", 1), |b| {
        b.iter(|| exec::map_sequential(&examples, |ex| predict(&model, &[&prompt], &head, &ex.tokens).unwrap()))
    });
    group.bench_function(BenchmarkId::new("ordered", threads), |b| {
        b.iter(|| {
            exec::with_threads(threads, || {
                exec::map_ordered(&examples, |ex| predict(&model, &[&prompt], &head, &ex.tokens).unwrap())
            })
        })
    });
    group.finish();

    let grad = |ex: &pplab::data::Example| {
        let mut g = Graph::new();
        let l = forward_logits(&mut g, &model, &[&prompt], &head, &ex.tokens).unwrap();
        let loss = g.cross_entropy(l, ex.label).unwrap();
        black_box(g.backward(loss).unwrap())
    };
    let mut group = c.benchmark_group("gradients_64");
    group.bench_function(BenchmarkId::new("sequential", 1), |b| b.iter(|| exec::map_sequential(&examples, grad)));
    group.bench_function(BenchmarkId::new("ordered", threads), |b| {
        b.iter(|| exec::with_threads(threads, || exec::map_ordered(&examples, grad)))
    });
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
