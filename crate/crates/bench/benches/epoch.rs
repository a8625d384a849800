use criterion::{criterion_group, criterion_main, Criterion};
use skillgraph::embed::{hash_embed, EmbedderSpec};
use skillgraph::gnn::LayerKind;
use skillgraph::metrics::{retrieval_at_k, MAX_K};
use skillgraph::tensor::{matmul, Tensor};
use skillgraph_bench::{fixture, forward_backward, model, rng};
use std::hint::black_box;

fn epoch(c: &mut Criterion) {
    let f = fixture(180, 768);
    let mut group = c.benchmark_group("epoch");
    group.sample_size(20);
    for layer in LayerKind::ALL {
        let m = model(&f, layer);
        let mut r = rng();
        group.bench_function(layer.as_str(), |b| b.iter(|| forward_backward(&f, &m, &mut r)));
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let a = Tensor::random(&[193, 1536], 1.0, 1);
    let w = Tensor::random(&[1536, 64], 1.0, 2);
    c.bench_function("matmul 193x1536x64", |b| {
        b.iter(|| matmul(black_box(&a), black_box(&w)))
    });

    let spec = EmbedderSpec::hashing(768);
    let text = "It sounds like the move has left you feeling unsettled and far from your friends.";
    c.bench_function("hash_embed 768", |b| b.iter(|| hash_embed(black_box(text), &spec)));

    let reps = Tensor::random(&[180, 832], 1.0, 3);
    let ids: Vec<String> = (0..180).map(|i| format!("ex-{i:03}")).collect();
    let labels: Vec<Option<usize>> = (0..180).map(|i| Some(i % 8)).collect();
    let queries: Vec<usize> = (0..48).collect();
    let candidates: Vec<usize> = (0..180).collect();
    c.bench_function("retrieval@10 48x180", |b| {
        b.iter(|| retrieval_at_k(&reps, &ids, &labels, &queries, &candidates, MAX_K).unwrap())
    });
}

criterion_group!(benches, epoch, kernels);
criterion_main!(benches);
