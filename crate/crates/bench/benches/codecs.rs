use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shapecode::synth::{generate, Family, SynthSpec};
use shapecode::{AeModel, GridCodec, LearnedCodec, Mask, ProbMap, RadialCodec, ShapeCodec};

fn corpus() -> Vec<Mask> {
    let spec = SynthSpec { families: Family::ALL.to_vec(), count: 4, canvas: 96, seed: 1, poses: false };
    generate(&spec).unwrap().into_iter().map(|it| it.mask).collect()
}

fn roundtrip(c: &mut Criterion) {
    let masks = corpus();
    let codecs: Vec<(&str, Box<dyn ShapeCodec>)> = vec![
        ("grid", Box::new(GridCodec::new(16).unwrap())),
        ("radial", Box::new(RadialCodec::new(50).unwrap())),
        ("learned", Box::new(LearnedCodec::new(AeModel::standard(20, 0).unwrap()))),
    ];
    let mut g = c.benchmark_group("roundtrip");
    g.sample_size(10);
    for (name, codec) in &codecs {
        g.bench_with_input(BenchmarkId::new(*name, codec.dim()), &masks, |b, masks| {
            b.iter(|| {
                for m in masks {
                    let code = codec.encode(m).unwrap();
                    std::hint::black_box(codec.decode(&code, 64, 64).unwrap());
                }
            })
        });
    }
    g.finish();
}

fn ae_forward(c: &mut Criterion) {
    let model = AeModel::standard(20, 0).unwrap();
    let input = ProbMap::constant(64, 64, 0.5).unwrap();
    c.bench_function("ae_forward_64", |b| b.iter(|| model.forward(&input).unwrap()));
    let target = vec![1.0; 64 * 64];
    c.bench_function("ae_backward_64", |b| b.iter(|| model.backward(input.data(), &target).unwrap()));
}

criterion_group!(benches, roundtrip, ae_forward);
criterion_main!(benches);
