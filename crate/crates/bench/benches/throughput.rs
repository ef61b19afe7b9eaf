use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use tablemb::corruption::{corrupt, table_rng};
use tablemb::index::{kmeans, EmbeddingIndex, EmbeddingKey, KMeansConfig, Metric};
use tablemb::synth::{generate_corpus, SynthConfig};
use tablemb::training::Trainer;
use tablemb::{build_cell_vocabulary, CorruptionConfig, EmbeddingKind, Model, ModelConfig, Table};

fn corpus(n: usize) -> Vec<Table> {
    generate_corpus("b", n, &SynthConfig::default())
        .unwrap()
        .into_iter()
        .map(|s| s.table)
        .collect()
}

fn embedder(c: &mut Criterion) {
    let model = Model::<f32>::new(ModelConfig::default(), 0).unwrap();
    let cells = ["1999-04-12", "Hiroshi Tanaka", "$1203.50", "Sri Lanka", "48213"];
    c.bench_function("embed_cell", |b| {
        b.iter(|| {
            for s in cells {
                black_box(model.embedder().embed_cell(black_box(s)));
            }
        })
    });
}

fn encode(c: &mut Criterion) {
    let tables = corpus(8);
    let mut g = c.benchmark_group("encode_table");
    for hidden in [64, 128] {
        let model = Model::<f32>::new(ModelConfig::desk(hidden, 2, 4), 0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(hidden), &model, |b, m| {
            b.iter(|| {
                for t in &tables {
                    black_box(m.encode_table(t, true).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let tables = corpus(16);
    let vocab = build_cell_vocabulary(tables.iter(), 100_000).unwrap();
    let cfg = CorruptionConfig::default();
    let records: Vec<_> = tables
        .iter()
        .map(|t| corrupt(t, &cfg, &vocab, &mut table_rng(0, 0, &t.id)))
        .collect();
    let model = Model::<f32>::new(ModelConfig::desk(64, 2, 4), 0).unwrap();
    let mut trainer = Trainer::new(model, 1e-4, Some(1.0));
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("step_16_tables", |b| {
        b.iter(|| black_box(trainer.step(&records).unwrap()))
    });
    g.finish();
}

fn vectors(n: usize, dim: usize) -> Vec<Vec<f32>> {
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u64 << 24) as f32 - 0.5
    };
    (0..n).map(|_| (0..dim).map(|_| next()).collect()).collect()
}

fn retrieval(c: &mut Criterion) {
    let vs = vectors(10_000, 64);
    let mut index = EmbeddingIndex::new(Metric::Cosine, 64);
    for (i, v) in vs.iter().enumerate() {
        let key = EmbeddingKey {
            table: format!("t{i}"),
            kind: EmbeddingKind::Table,
        };
        index.insert(key, v.clone()).unwrap();
    }
    c.bench_function("knn_10k_k10", |b| b.iter(|| black_box(index.knn(&vs[17], 10).unwrap())));
    let small = vectors(2_000, 64);
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    g.bench_function("2k_points_k32", |b| {
        b.iter(|| {
            let cfg = KMeansConfig {
                k: 32,
                max_iters: 20,
                seed: 0,
            };
            black_box(kmeans(&small, &cfg).unwrap())
        })
    });
    g.finish();
}

criterion_group!(benches, embedder, encode, train_step, retrieval);
criterion_main!(benches);
