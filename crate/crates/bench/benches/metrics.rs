use criterion::{black_box, criterion_group, criterion_main, Criterion};
use umae::metrics::{bleu, cider, meteor_corpus, rouge_l_corpus, IdfMode};
use umae::text::MetricTokenizer;

fn metrics(c: &mut Criterion) {
    let items = umae_bench::eval_items();
    let tok = MetricTokenizer::default();
    let mut g = c.benchmark_group("metrics");
    g.bench_function("bleu", |b| b.iter(|| bleu(black_box(&items), &tok)));
    g.bench_function("rouge_l", |b| {
        b.iter(|| rouge_l_corpus(black_box(&items), &tok))
    });
    g.bench_function("meteor", |b| {
        b.iter(|| meteor_corpus(black_box(&items), &tok))
    });
    g.bench_function("cider", |b| {
        b.iter(|| cider(black_box(&items), &tok, IdfMode::Smoothed))
    });
    g.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
