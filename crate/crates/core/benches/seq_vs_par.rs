use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dts_core::gatne::{build_corpus, generate_walks, train_with_corpus, GatneConfig};
use dts_core::ingest::{build_graph, extract_triples, EdgeType, KnowledgeGraph, MultiplexGraph};
use dts_core::kge::{train_kge, KgeConfig};
use dts_core::recall::FlatIndex;
use dts_core::synth::{generate_synthetic, SynthConfig};
use dts_core::{EmbeddingMatrix, ThreadMode};

const MODES: [(&str, ThreadMode); 2] = [("det", ThreadMode::Deterministic), ("par", ThreadMode::Parallel)];

struct Fixture {
    graph: MultiplexGraph,
    kg: KnowledgeGraph,
    base: EmbeddingMatrix,
    gatne: GatneConfig,
}

fn fixture() -> Fixture {
    let synth = SynthConfig { items_per_category: 400, sessions: 4000, seed: 1, ..Default::default() };
    let data = generate_synthetic(&synth, ThreadMode::Parallel).unwrap();
    let catalog = data.catalog.iter().map(|c| (c.item_id.clone(), c.clone())).collect();
    let kg = extract_triples(&catalog, &data.aspects, &data.similarity);
    let kge = KgeConfig { dim: 32, epochs: 3, seed: 1, ..Default::default() };
    let base = train_kge(kg.triples(), kg.entity_count(), &kge, ThreadMode::Parallel).unwrap().model.item_embeddings(&kg).unwrap();
    let (graph, _) = build_graph(&data.sessions, &catalog, ThreadMode::Parallel);
    let gatne = GatneConfig { dim: 32, base_dim: 32, epochs: 1, seed: 1, ..Default::default() };
    Fixture { graph, kg, base, gatne }
}

fn benches(c: &mut Criterion) {
    let f = fixture();

    let mut g = c.benchmark_group("walks");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_walks(black_box(&f.graph), EdgeType::CoBought, 5, 5, 7, mode))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("kge_epoch");
    g.sample_size(10);
    let kge = KgeConfig { dim: 64, epochs: 1, seed: 2, ..Default::default() };
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_kge(black_box(f.kg.triples()), f.kg.entity_count(), &kge, mode).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("gatne_epoch");
    g.sample_size(10);
    let corpus = build_corpus(&f.graph, &f.gatne, ThreadMode::Parallel);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_with_corpus(black_box(&f.graph), &f.base, &corpus, &f.gatne, mode).unwrap())
        });
    }
    g.finish();

    let trained = train_with_corpus(&f.graph, &f.base, &corpus, &f.gatne, ThreadMode::Parallel).unwrap();
    let emb = trained.embedding(EdgeType::CoBought);
    let items = emb.ids().iter().cloned().collect();
    let index = FlatIndex::build(emb, &items, false).unwrap();
    let anchors: Vec<String> = emb.ids().to_vec();
    let mut g = c.benchmark_group("recall_batch");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| index.query_batch(black_box(emb), &anchors, 50, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(seq_vs_par, benches);
criterion_main!(seq_vs_par);
