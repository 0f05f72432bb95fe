use std::hint::black_box;

use backvis::experiments::three_layer_spec;
use backvis::tensor::sample;
use backvis::visualize::backward_raw;
use backvis::{Network, Padding, PatchPlan, RngSpec, VisMethod};
use criterion::{criterion_group, criterion_main, Criterion};

fn patches(c: &mut Criterion) {
    let plan = PatchPlan::new((64, 64, 3), (7, 7), 2, Padding::Valid).unwrap();
    let x = sample(&RngSpec::gaussian(0, 0.0, 1.0), vec![64, 64, 3]).unwrap();
    let rows = plan.gather(&x).unwrap();
    c.bench_function("gather 64x64x3 7x7/2", |b| {
        b.iter(|| plan.gather(black_box(&x)).unwrap())
    });
    c.bench_function("scatter 64x64x3 7x7/2", |b| {
        b.iter(|| plan.scatter(black_box(&rows)).unwrap())
    });
}

fn engine(c: &mut Criterion) {
    let spec = three_layer_spec([64, 64, 3], 7, 2, 64, 10, None);
    let net = Network::build(&spec, &RngSpec::truncated(1, 0.0, 0.1)).unwrap();
    let x = sample(&RngSpec::gaussian(2, 0.0, 1.0), vec![64, 64, 3]).unwrap();
    c.bench_function("forward 3-layer N=64", |b| {
        b.iter(|| net.forward(black_box(&x)).unwrap())
    });
    let trace = net.forward(&x).unwrap();
    let mut group = c.benchmark_group("backward 3-layer N=64");
    for m in VisMethod::ALL {
        group.bench_function(m.name(), |b| {
            b.iter(|| backward_raw(&net, black_box(&trace), 0, m).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = patches, engine
}
criterion_main!(benches);
