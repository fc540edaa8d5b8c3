use colora_bench::{conv_inputs, dense_adapters, stats_pair};
use colora_core::metrics::{frechet_distance, FeatureEmbedder};
use colora_core::networks::{generate_images, GeneratorWeights};
use colora_core::tensor::Tape;
use colora_core::ArchSpec;
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn conv(c: &mut Criterion) {
    let (x, w) = conv_inputs(4, 64, 16, 3);
    c.bench_function("conv2d_fwd_bwd_4x64x16x16", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone().with_requires_grad(true)).unwrap();
            let wv = tape.leaf(w.clone().with_requires_grad(true)).unwrap();
            let y = tape.conv2d(xv, wv).unwrap();
            let l = tape.sum(y).unwrap();
            tape.backward(l).unwrap();
            black_box(tape.grad(wv).map(|g| g[0]))
        })
    });
}

fn adapters(c: &mut Criterion) {
    let set = dense_adapters(1);
    c.bench_function("desk_adapter_deltas_r1", |b| {
        b.iter(|| black_box(set.deltas().unwrap().len()))
    });
    let set8 = dense_adapters(8);
    c.bench_function("desk_adapter_deltas_r8", |b| {
        b.iter(|| black_box(set8.deltas().unwrap().len()))
    });
}

fn metrics(c: &mut Criterion) {
    let (a, b2) = stats_pair(200);
    c.bench_function("frechet_64d", |b| {
        b.iter(|| black_box(frechet_distance(&a, &b2).unwrap()))
    });
    let g = GeneratorWeights::<f32>::init(&ArchSpec::desk(), 0).unwrap();
    let imgs = generate_images(&g, None, 8, 0, 8).unwrap();
    let e = FeatureEmbedder::standard();
    c.bench_function("embed_32x32", |b| {
        b.iter(|| black_box(e.embed(&imgs[0]).unwrap().features[0]))
    });
    c.bench_function("generate_8_desk", |b| {
        b.iter(|| black_box(generate_images(&g, None, 8, 1, 8).unwrap().len()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, adapters, metrics
}
criterion_main!(benches);
