//! Rayon vs sequential comparison for the hot kernels and a full
//! small-cnn training step. The parallel path must win on batch-level
//! work; both paths are bit-identical by construction.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::backend::layers::{conv2d_forward, ConvDims};
use unlearn_core::backend::{build_classifier, ArchKind, ArchitectureSpec, LossOutput, SgdOptimizer};
use unlearn_core::exec;
use unlearn_core::tensor::Tensor;
use unlearn_core::unlearn::losses::retain_ce_loss_grad;

fn randv(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn bench_conv_forward(c: &mut Criterion) {
    let d = ConvDims { batch: 32, cin: 32, h: 32, w: 32, cout: 32, k: 3, stride: 1, pad: 1 };
    let x = randv(d.batch * d.cin * d.h * d.w, 1);
    let w = randv(d.cout * d.cin * 9, 2);
    let mut out = vec![0.0f32; d.batch * d.cout * d.out_h() * d.out_w()];
    let mut group = c.benchmark_group("conv2d_forward_32x32x32");
    group.bench_function(BenchmarkId::new("parallel", d.batch), |b| {
        b.iter(|| conv2d_forward(black_box(&x), black_box(&w), None, &d, &mut out))
    });
    group.bench_function(BenchmarkId::new("serial", d.batch), |b| {
        b.iter(|| exec::force_serial(|| conv2d_forward(black_box(&x), black_box(&w), None, &d, &mut out)))
    });
    group.finish();
}

fn train_step(model: &mut unlearn_core::backend::Classifier, images: &Tensor, labels: &[usize]) {
    let mut opt = SgdOptimizer::new(0.01, 0.9, 5e-4).unwrap();
    let (_, grads) = model
        .loss_grads(images, |logits, _f, _v| {
            let (v, g) = retain_ce_loss_grad(logits, labels).unwrap();
            Ok(LossOutput::from_logits(v, g))
        })
        .unwrap();
    opt.step(model, &grads).unwrap();
}

fn bench_small_cnn_step(c: &mut Criterion) {
    let spec = ArchitectureSpec::new(ArchKind::SmallCnn, 10).unwrap();
    let mut model = build_classifier(&spec, 0).unwrap();
    model.set_train(true);
    let bsz = 64;
    let images = Tensor::from_vec(&[bsz, 3, 32, 32], randv(bsz * 3 * 32 * 32, 3));
    let labels: Vec<usize> = (0..bsz).map(|i| i % 10).collect();
    let mut group = c.benchmark_group("small_cnn_train_step_b64");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| train_step(&mut model, &images, &labels)));
    group.bench_function("serial", |b| {
        b.iter(|| exec::force_serial(|| train_step(&mut model, &images, &labels)))
    });
    group.finish();
}

fn bench_batch_eval(c: &mut Criterion) {
    let spec = ArchitectureSpec::new(ArchKind::SmallCnn, 10).unwrap();
    let mut model = build_classifier(&spec, 1).unwrap();
    let bsz = 128;
    let images = Tensor::from_vec(&[bsz, 3, 32, 32], randv(bsz * 3 * 32 * 32, 4));
    let mut group = c.benchmark_group("small_cnn_eval_b128");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(model.forward_logits(black_box(&images)).unwrap()))
    });
    group.bench_function("serial", |b| {
        b.iter(|| exec::force_serial(|| black_box(model.forward_logits(black_box(&images)).unwrap())))
    });
    group.finish();
}

criterion_group!(benches, bench_conv_forward, bench_small_cnn_step, bench_batch_eval);
criterion_main!(benches);
