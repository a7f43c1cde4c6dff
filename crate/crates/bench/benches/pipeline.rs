use criterion::{criterion_group, criterion_main, Criterion};
use samdp_core::aggregation::{kmeans, kmeans_spatiotemporal};
use samdp_core::embedding::{embed_dataset, tsne_embed};
use samdp_core::rooms::{generate, RoomsConfig};
use samdp_core::samdp::solve_value;
use samdp_core::{fit_samdp, ClusterConfig, EmbeddingConfig, FitParams};
use std::hint::black_box;

fn rooms(episodes: usize) -> samdp_core::TrajectoryDataset {
    generate(&RoomsConfig { episodes, ..RoomsConfig::default() }).unwrap().dataset
}

fn bench_embedding(c: &mut Criterion) {
    let ds = rooms(100);
    let cfg = EmbeddingConfig { iterations: 300, ..EmbeddingConfig::default() };
    let mut g = c.benchmark_group("embedding");
    g.sample_size(10);
    g.bench_function("embed_rooms_100_episodes", |b| b.iter(|| embed_dataset(black_box(&ds), &cfg).unwrap()));
    let run = embed_dataset(&ds, &cfg).unwrap();
    let reduced = run.pca.transform(&ds.features()).unwrap().select_rows(&run.sampled);
    g.bench_function("tsne_distinct_cells", |b| b.iter(|| tsne_embed(black_box(&reduced), &cfg).unwrap()));
    g.finish();
}

fn bench_clustering_and_fit(c: &mut Criterion) {
    let ds = rooms(300);
    let cfg = EmbeddingConfig { iterations: 500, ..EmbeddingConfig::default() };
    let emb = embed_dataset(&ds, &cfg).unwrap().embedded;
    let cc = ClusterConfig { k: 6, w: 2, ..ClusterConfig::default() };
    let mut g = c.benchmark_group("aggregation");
    g.sample_size(20);
    g.bench_function("kmeans_k6", |b| b.iter(|| kmeans(black_box(&emb), &cc).unwrap()));
    g.bench_function("spatiotemporal_k6_w2", |b| {
        b.iter(|| kmeans_spatiotemporal(black_box(&emb), &cc, ds.episode_offsets()).unwrap())
    });
    g.finish();

    let labels = kmeans(&emb, &cc).unwrap().labels;
    let params = FitParams::default();
    c.bench_function("fit_samdp_k6", |b| b.iter(|| fit_samdp(black_box(&labels), 6, &ds, &params).unwrap()));
    let model = fit_samdp(&labels, 6, &ds, &params).unwrap();
    c.bench_function("solve_value_k6", |b| b.iter(|| solve_value(black_box(&model)).unwrap()));
}

criterion_group!(benches, bench_embedding, bench_clustering_and_fit);
criterion_main!(benches);
