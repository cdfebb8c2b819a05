use criterion::{criterion_group, criterion_main, Criterion};
use mmtopic::descriptors::top_images;
use mmtopic::metrics::{iec, ieps, irbo, npmi};
use mmtopic::{hungarian, DenseMatrix, ModelKind};
use mmtopic_bench::{keywords, planted, quick_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_metrics(c: &mut Criterion) {
    let corpus = planted(1000, 200, 0);
    let model = quick_model(&corpus, ModelKind::MultimodalZeroShot, 25);
    let topics = keywords(&model, 10);
    let reference = corpus.reference_tokens();
    let images: Vec<Vec<Vec<f64>>> = (0..25)
        .map(|k| {
            top_images(&model.doc_theta, &corpus, k, 10)
                .unwrap()
                .into_iter()
                .map(|d| d.embedding)
                .collect()
        })
        .collect();

    c.bench_function("npmi_k25_1000docs", |b| b.iter(|| npmi(&topics, &reference, 10).unwrap()));
    c.bench_function("irbo_k25", |b| b.iter(|| irbo(&topics, 0.9).unwrap()));
    c.bench_function("iec_k25", |b| b.iter(|| iec(&images).unwrap()));
    c.bench_function("ieps_k25", |b| b.iter(|| ieps(&images).unwrap()));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = DenseMatrix::from_vec(100, 100, (0..10_000).map(|_| rng.random()).collect()).unwrap();
    c.bench_function("hungarian_100", |b| b.iter(|| hungarian(&m, true).unwrap()));
}

criterion_group!(benches, bench_metrics);
criterion_main!(benches);
