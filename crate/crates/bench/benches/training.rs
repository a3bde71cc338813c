use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fuseqa_core::experiment::training_weights;
use fuseqa_core::fusion::{optimize_thresholds, predict_probs, train_classifier, ProbVector, TrainConfig};
use fuseqa_core::synth::{complementary_preset, gen_dataset, Modality};
use fuseqa_core::taxonomy::Nomenclature;

fn bench_training(c: &mut Criterion) {
    let names: Vec<String> = (0..12).map(|j| format!("class {j}")).collect();
    let nom = Nomenclature::flat(&names).unwrap();
    let mut cfg = complementary_preset(&nom).unwrap();
    cfg.n_samples = 2000;
    let ds = gen_dataset(&cfg).unwrap();
    let train = &ds.data.train;
    let w = training_weights(train).unwrap();
    let tc = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let x = train.features(Modality::Optical);
    c.bench_function("train_head_1200x5_epochs", |b| {
        b.iter(|| train_classifier(black_box(x), &train.labels, &w, &tc).unwrap())
    });

    let model = train_classifier(x, &train.labels, &w, &tc).unwrap();
    let val = &ds.data.val;
    let probs: Vec<ProbVector> = val
        .features(Modality::Optical)
        .iter()
        .map(|f| predict_probs(&model, f).unwrap())
        .collect();
    c.bench_function("optimize_thresholds_400x12", |b| {
        b.iter(|| optimize_thresholds(black_box(&probs), &val.labels, 2.0, 0.05).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_training
}
criterion_main!(benches);
