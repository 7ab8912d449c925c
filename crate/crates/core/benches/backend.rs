//! Compare the rayon data-parallel backend against the sequential fallback
//! on the two workloads that dominate wall time: batched model inference and
//! batched image preprocessing.
//!
//! Run with `cargo bench --bench backend`. Building with
//! `--no-default-features` removes the parallel path entirely; here both
//! backends are toggled at runtime so one binary produces the comparison.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use facebench::backbones::{build_model, BackboneId, BackboneSpec};
use facebench::dataset::{synth_pixels, Label};
use facebench::par::{self, Backend};
use facebench::tensor::Tensor;
use facebench::train::predict_proba;

const BACKENDS: [(Backend, &str); 2] =
    [(Backend::Sequential, "sequential"), (Backend::Parallel, "parallel")];

fn synth_batch(n: usize) -> Vec<Tensor> {
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Asd } else { Label::Td };
            synth_pixels(7, i as u64, label)
        })
        .collect()
}

/// Full MobileNet forward pass over a small batch: per-sample graph
/// execution fanned out by `par::map_ordered`.
fn bench_inference(c: &mut Criterion) {
    let model = build_model(&BackboneSpec::new(BackboneId::MobileNet), false, 7)
        .expect("random-init build");
    let batch = synth_batch(4);

    let mut group = c.benchmark_group("mobilenet_predict_batch4");
    group.sample_size(10);
    for (backend, name) in BACKENDS {
        group.bench_with_input(BenchmarkId::from_parameter(name), &backend, |b, &be| {
            par::set_backend(be);
            b.iter(|| predict_proba(&model, std::hint::black_box(&batch)));
        });
    }
    group.finish();
    par::set_backend(Backend::Parallel);
}

/// Synthetic-corpus pixel generation for a batch, the preprocessing-shaped
/// workload (`par::map_ordered` over independent samples).
fn bench_pixel_generation(c: &mut Criterion) {
    let indices: Vec<u64> = (0..16).collect();

    let mut group = c.benchmark_group("synth_pixels_batch16");
    group.sample_size(10);
    for (backend, name) in BACKENDS {
        group.bench_with_input(BenchmarkId::from_parameter(name), &backend, |b, &be| {
            par::set_backend(be);
            b.iter(|| {
                par::map_ordered(std::hint::black_box(&indices), |&i| {
                    synth_pixels(7, i, if i % 2 == 0 { Label::Asd } else { Label::Td })
                })
            });
        });
    }
    group.finish();
    par::set_backend(Backend::Parallel);
}

criterion_group!(benches, bench_inference, bench_pixel_generation);
criterion_main!(benches);
