use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use docie_core::coref::{dendrogram, select_num_clusters};
use docie_core::corpus::generate_synthetic;
use docie_core::encoder::{encode_document, Mode, Vocab};
use docie_core::nn::Tensor;
use docie_core::pipeline::predict_document;
use docie_core::tagger::{log_partition, viterbi};
use docie_core::{Model, ModelConfig, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn setup() -> (Model, Vec<docie_core::Document>) {
    let docs = generate_synthetic(1, 4, &SynthConfig::default()).unwrap();
    let vocab = Vocab::build(&docs, None);
    (Model::new(ModelConfig::desk(), vocab, 1).unwrap(), docs)
}

fn crf(c: &mut Criterion) {
    let (model, _) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("crf");
    for len in [64usize, 512] {
        let em = Tensor::from_vec(len, 17, (0..len * 17).map(|_| rng.random_range(-2.0..2.0)).collect());
        group.bench_with_input(BenchmarkId::new("forward", len), &em, |b, em| {
            b.iter(|| log_partition(black_box(em), model.crf.scores(&model.store)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("viterbi", len), &em, |b, em| {
            b.iter(|| viterbi(black_box(em), model.crf.scores(&model.store)))
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("clustering");
    for n in [16usize, 64] {
        let mut s = Tensor::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v = if i % 4 == j % 4 { 0.9 } else { 0.1 } + rng.random_range(-0.05..0.05);
                s.set(i, j, v);
                s.set(j, i, v);
            }
        }
        group.bench_with_input(BenchmarkId::new("dendrogram", n), &s, |b, s| b.iter(|| dendrogram(black_box(s)).unwrap()));
        group.bench_with_input(BenchmarkId::new("select_k", n), &s, |b, s| {
            b.iter(|| select_num_clusters(black_box(s), (2, n / 2)).unwrap())
        });
    }
    group.finish();
}

fn encoder(c: &mut Criterion) {
    let (model, docs) = setup();
    c.bench_function("encoder/document", |b| {
        b.iter(|| encode_document(black_box(&docs[0]), &model.store, &model.encoder, &model.vocab, Mode::Eval, 0).unwrap())
    });
    c.bench_function("pipeline/predict_document", |b| b.iter(|| predict_document(&model, black_box(&docs[0])).unwrap()));
}

criterion_group!(benches, crf, clustering, encoder);
criterion_main!(benches);
