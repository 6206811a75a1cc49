use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use uap_core::model::{generate_synthetic_dataset, CrossEntropy, DatasetSpec, Split};
use uap_core::penalty::{penalty_loss_at, Hinge};
use uap_core::{
    ddn_minimal_perturbation, to_tanh_space, Architecture, AttackMode, DdnConfig, TanhVector,
};

const D: usize = 4096;

fn kernels(c: &mut Criterion) {
    let data = generate_synthetic_dataset(&DatasetSpec::new(3, 3, D, 0.1, 0)).unwrap();
    let x = data.split(Split::Train)[0].sample.samples().to_vec();
    let model = Architecture::RandCnn.build(D, 3, 0).unwrap();

    c.bench_function("forward rand-cnn d=4096", |b| {
        b.iter(|| model.forward_logits(black_box(&x)).unwrap())
    });
    c.bench_function("input gradient rand-cnn d=4096", |b| {
        b.iter(|| {
            model
                .input_gradient(black_box(&x), &CrossEntropy(0))
                .unwrap()
        })
    });

    let ddn = DdnConfig::default();
    let mut group = c.benchmark_group("attacks");
    group.sample_size(10);
    group.bench_function("ddn 50 steps", |b| {
        b.iter(|| {
            ddn_minimal_perturbation(&model, black_box(&x), AttackMode::Untargeted, 0, &ddn)
                .unwrap()
        })
    });

    let xt = to_tanh_space(&x, 1e-7).unwrap();
    let v = TanhVector::new(vec![0.01; D], 1e-7).unwrap();
    let hinge = Hinge::new(AttackMode::Targeted(1), 0, 10.0);
    group.bench_function("penalty loss and gradient, one sample", |b| {
        b.iter(|| penalty_loss_at(&model, black_box(&xt), &v, &hinge, 0.15).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
