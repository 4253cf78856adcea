use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mlppnn::kernelnet::Kernel;
use mlppnn::pipeline::interpolate;
use mlppnn::registration::register_sequence;
use mlppnn::restoration::apply_filter_with;
use mlppnn::training::BatchObjective;
use mlppnn_bench::{filter, image, network, patterns, sequence};

fn interpolation(c: &mut Criterion) {
    let kernel = Kernel::Mlp(network(1));
    let mut group = c.benchmark_group("interpolation");
    for (size, frames) in [(32, 25), (64, 25), (64, 50)] {
        let seq = sequence(size, frames, 2);
        group.throughput(Throughput::Elements((9 * size * size) as u64));
        group.bench_with_input(BenchmarkId::new(format!("{frames}_frames"), size), &seq, |b, seq| {
            b.iter(|| interpolate(black_box(&seq.frames), &seq.transforms, &kernel, 3, 0, false).unwrap())
        });
    }
    group.finish();
}

fn backprop(c: &mut Criterion) {
    let data = patterns(1000, 3);
    let net = network(4);
    let objective = BatchObjective::new(&data, net.hidden(), false);
    let mut grad = vec![0.0; net.params().len()];
    let mut group = c.benchmark_group("backprop");
    group.throughput(Throughput::Elements(data.len() as u64));
    group.bench_function("batch_1000", |b| {
        b.iter(|| objective.evaluate(black_box(net.params()), &mut grad))
    });
    group.finish();
}

fn restoration(c: &mut Criterion) {
    let f = filter();
    let img = image(192, 5);
    c.bench_function("apply_filter_7x7_192", |b| b.iter(|| apply_filter_with(black_box(&img), &f, false)));
}

fn registration(c: &mut Criterion) {
    let seq = sequence(64, 5, 6);
    let mut group = c.benchmark_group("registration");
    group.sample_size(10);
    group.bench_function("five_frames_64", |b| b.iter(|| register_sequence(black_box(&seq.frames), 0).unwrap()));
    group.finish();
}

criterion_group!(benches, interpolation, backprop, restoration, registration);
criterion_main!(benches);
