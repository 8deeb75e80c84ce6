use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use diarkit_bench::{planted_streams, random_cost, random_timeline, simulated_bundles, simulated_session};
use diarkit_core::clustering::{cluster_session, ClusteringParams};
use diarkit_core::fusion::{fuse, HypothesisSet, RankWeighting};
use diarkit_core::hungarian;
use diarkit_core::pipeline::{run_channel, run_session, PipelineConfig};
use diarkit_core::scoring::{score, ScoringOptions};

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for n in [8usize, 16, 32] {
        let cost = random_cost(n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &cost, |b, cost| {
            b.iter(|| hungarian(black_box(cost)));
        });
    }
    group.finish();
}

fn bench_clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("cluster_session");
    for n in [90usize, 360] {
        let streams = planted_streams(n, 4, 16, 7);
        let params = ClusteringParams::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &streams, |b, streams| {
            b.iter(|| cluster_session(black_box(streams), 4, &params).unwrap());
        });
    }
    group.finish();
}

fn bench_scoring(c: &mut Criterion) {
    let reference = random_timeline("s", 400, 1);
    let system = random_timeline("s", 400, 2);
    let opts = ScoringOptions::default();
    c.bench_function("score_400_turns", |b| {
        b.iter(|| score(black_box(&reference), black_box(&system), &opts).unwrap());
    });
}

fn bench_fusion(c: &mut Criterion) {
    let hyps: Vec<_> = (0..6).map(|s| random_timeline("s", 200, s)).collect();
    let set = HypothesisSet::new(hyps).unwrap();
    c.bench_function("fuse_6_channels_200_turns", |b| {
        b.iter(|| fuse(black_box(&set), RankWeighting::LinearRank));
    });
}

fn bench_end_to_end(c: &mut Criterion) {
    let (cfg, truth) = simulated_session(10.0, 2, 11);
    let bundles = simulated_bundles(&cfg, &truth, 0);
    let pcfg = PipelineConfig {
        median_window: 3,
        ..Default::default()
    };
    c.bench_function("run_channel_10min", |b| {
        b.iter(|| run_channel(&truth.timeline.session_id, 0, black_box(&bundles), &pcfg).unwrap());
    });

    let channels: Vec<_> = (0..cfg.n_channels)
        .map(|ch| simulated_bundles(&cfg, &truth, ch))
        .collect();
    c.bench_function("run_session_10min_2ch", |b| {
        b.iter(|| run_session(&truth.timeline.session_id, black_box(&channels), &pcfg).unwrap());
    });
}

criterion_group!(
    benches,
    bench_hungarian,
    bench_clustering,
    bench_scoring,
    bench_fusion,
    bench_end_to_end
);
criterion_main!(benches);
