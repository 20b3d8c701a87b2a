use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use umae::decode::{generate, DecodeConfig};

fn decode(c: &mut Criterion) {
    let scorer = umae_bench::scorer();
    let contexts = umae_bench::contexts(&scorer, 16);
    let configs = [
        ("beam-5", DecodeConfig::beam(5, 20)),
        ("top-k-10", DecodeConfig::top_k(10, 20, 7)),
        ("nucleus-0.9", DecodeConfig::nucleus(0.9, 20, 7)),
        ("typical-0.8", DecodeConfig::typical(0.8, 20, 7)),
    ];
    let mut g = c.benchmark_group("decode");
    for (name, cfg) in &configs {
        g.bench_with_input(BenchmarkId::from_parameter(name), cfg, |b, cfg| {
            b.iter(|| {
                for ctx in &contexts {
                    black_box(generate(&scorer, ctx, cfg).unwrap());
                }
            })
        });
    }
    g.finish();
}

criterion_group!(benches, decode);
criterion_main!(benches);
