use criterion::{criterion_group, criterion_main, Criterion};
use heatrank::explain::{explain, Composite, LrpParams, MethodSpec};
use heatrank::explain::lrp::lrp;
use heatrank::heatmap::{pool_channels, Pooling};
use heatrank::method::MethodId;
use heatrank::metrics::flipping::pixel_flipping;
use heatrank::nn::ReluMode;
use heatrank::ranking::{rank_monte_carlo, GroupAssignment, MetricTable};
use heatrank::segment::{quickshift, QuickshiftParams};
use heatrank_bench::{image, model, scores};

fn network(c: &mut Criterion) {
    let (m, k) = (model(), image());
    c.bench_function("forward", |b| b.iter(|| m.logits(&k.image).unwrap()));
    c.bench_function("input_gradient", |b| {
        b.iter(|| m.input_gradient(&k.image, 1, ReluMode::Standard).unwrap())
    });
    c.bench_function("lrp_epsilon_plus_flat", |b| {
        b.iter(|| lrp(&m, &k.image, 1, Composite::EpsilonPlusFlat, LrpParams::default()).unwrap())
    });
}

fn explainers(c: &mut Criterion) {
    let (m, k) = (model(), image());
    let segments = quickshift(&k.image, &k.foreground, &QuickshiftParams::default()).unwrap();
    let mut g = c.benchmark_group("explain");
    g.sample_size(10);
    for id in [MethodId::IntegratedGradients, MethodId::Occlusion, MethodId::Lime] {
        let spec = MethodSpec::new(id);
        g.bench_function(id.id(), |b| b.iter(|| explain(&spec, &m, &k.image, 1, Some(&segments), 0).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let (m, k) = (model(), image());
    c.bench_function("quickshift", |b| {
        b.iter(|| quickshift(&k.image, &k.foreground, &QuickshiftParams::default()).unwrap())
    });
    let h = explain(&MethodSpec::new(MethodId::Gradients), &m, &k.image, 1, None, 0).unwrap();
    let map = pool_channels(&h, Pooling::MaxAbs);
    c.bench_function("pixel_flipping_20pct", |b| {
        b.iter(|| pixel_flipping(&m, &k.image, &map, 1, 0.2, 0).unwrap())
    });
}

fn ranking(c: &mut Criterion) {
    let table = MetricTable::from_scores(&scores(), &MethodId::ALL, &GroupAssignment::standard()).unwrap();
    c.bench_function("rank_monte_carlo_100", |b| b.iter(|| rank_monte_carlo(&table, 100, 0).unwrap()));
}

criterion_group!(benches, network, explainers, metrics, ranking);
criterion_main!(benches);
