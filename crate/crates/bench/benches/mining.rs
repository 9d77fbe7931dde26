use std::hint::black_box;

use cok_bench::{graph, tsv};
use cok_core::mining::{compose_library, filter_rules, mine_two_hop_rules, score_rule, ComposeConfig};
use cok_core::{KnowledgeGraph, RuleFilter, Threshold};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn ingest(c: &mut Criterion) {
    let mut group = c.benchmark_group("ingest");
    for n in [5_000, 50_000] {
        let text = tsv(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &text, |b, text| {
            b.iter(|| KnowledgeGraph::from_tsv(black_box(text)).unwrap())
        });
    }
    group.finish();
}

fn mining(c: &mut Criterion) {
    let mut group = c.benchmark_group("mine_two_hop");
    group.sample_size(10);
    let kg = graph(50_000);
    for workers in [1, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| mine_two_hop_rules(black_box(&kg), w))
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let kg = graph(20_000);
    let filter = RuleFilter { min_support: 20, min_confidence: Threshold::new(6, 10) };
    let two_hop = filter_rules(&mine_two_hop_rules(&kg, 1), filter);
    let composed = compose_library(&kg, &two_hop, ComposeConfig { max_hop: 4, filter, workers: 1 });
    let mut group = c.benchmark_group("score_rule");
    if let Some(s) = two_hop.first() {
        group.bench_function("2-hop", |b| b.iter(|| score_rule(black_box(&kg), &s.rule)));
    }
    if let Some(s) = composed.iter().max_by_key(|s| s.rule.hop()) {
        group.bench_function(format!("{}-hop", s.rule.hop()), |b| b.iter(|| score_rule(black_box(&kg), &s.rule)));
    }
    group.bench_function("compose_library", |b| {
        b.iter(|| compose_library(black_box(&kg), &two_hop, ComposeConfig { max_hop: 4, filter, workers: 1 }))
    });
    group.finish();
}

criterion_group!(benches, ingest, mining, scoring);
criterion_main!(benches);
