//! Forward-pass throughput of the parallel map against the sequential one.
//! Build with `--no-default-features` to see `par` fall back as well.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use csr_core::model::{forward, ModelConfig, ModelParams};
use csr_core::par;
use csr_core::taskgen::{generate_dataset, GeneratorConfig};
use csr_core::trace::TokenSequence;
use csr_core::train::{resolved_model_config, TrainConfig};

fn forward_throughput(c: &mut Criterion) {
    let data = generate_dataset(&GeneratorConfig::default(), 256).expect("dataset");
    let tok = data.tokenizer();
    let seqs: Vec<TokenSequence> = data.tasks.iter().map(|t| t.render(&tok).expect("render")).collect();
    let cfg = TrainConfig {
        model: ModelConfig {
            d_model: 32,
            d_ff: 64,
            d_hidden: 64,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let params = ModelParams::init(resolved_model_config(&data, &cfg)).expect("params");

    let mut group = c.benchmark_group("forward");
    group.throughput(Throughput::Elements(seqs.len() as u64));
    group.sample_size(20);
    group.bench_with_input(BenchmarkId::new("parallel", seqs.len()), &seqs, |b, s| {
        b.iter(|| par::map_indexed(s, |_, x| forward(&params, x, 1.0).expect("forward").probs[0]))
    });
    group.bench_with_input(BenchmarkId::new("sequential", seqs.len()), &seqs, |b, s| {
        b.iter(|| par::map_indexed_seq(s, |_, x| forward(&params, x, 1.0).expect("forward").probs[0]))
    });
    group.finish();
}

criterion_group!(benches, forward_throughput);
criterion_main!(benches);
