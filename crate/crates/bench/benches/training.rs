use criterion::{criterion_group, criterion_main, Criterion};
use mmtopic::{train, ModelConfig, ModelKind};
use mmtopic_bench::planted;

fn bench_epoch(c: &mut Criterion) {
    let corpus = planted(500, 200, 0);
    let mut group = c.benchmark_group("one_epoch_500docs");
    group.sample_size(10);
    for kind in ModelKind::ALL {
        let mut cfg = ModelConfig::new(kind, 25);
        cfg.epochs = 1;
        group.bench_function(kind.as_str(), |b| b.iter(|| train(&corpus, &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_epoch);
criterion_main!(benches);
