use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use deconv_bench::fig31_sample;
use deconv_core::min_contrast::{a_hat, PceConfig};
use deconv_core::quadrature::linspace;
use deconv_core::{deconv_kde, deconv_kde_batched, DeconvKernelPlan, ErrorSpec, KernelSpec};

fn laplace() -> deconv_core::ErrorModel {
    "laplace:varratio=0.1"
        .parse::<ErrorSpec>()
        .unwrap()
        .resolve(Some(1.0))
        .unwrap()
}

fn kernel_eval(c: &mut Criterion) {
    let plan = DeconvKernelPlan::new(KernelSpec::fourier_polynomial(2, 2).unwrap(), laplace(), 0.3).unwrap();
    c.bench_function("eval_k_u", |b| b.iter(|| plan.eval(black_box(0.7))));
}

fn density_paths(c: &mut Criterion) {
    let plan = DeconvKernelPlan::new(KernelSpec::fourier_polynomial(2, 2).unwrap(), laplace(), 0.3).unwrap();
    let grid = linspace(-4.0, 4.0, 512);
    let mut group = c.benchmark_group("deconv_kde");
    group.sample_size(10);
    for n in [100usize, 1000] {
        let sample = fig31_sample(n);
        if n <= 100 {
            group.bench_with_input(BenchmarkId::new("direct", n), &sample, |b, s| {
                b.iter(|| deconv_kde(s, &plan, &grid).unwrap())
            });
        }
        group.bench_with_input(BenchmarkId::new("batched", n), &sample, |b, s| {
            b.iter(|| deconv_kde_batched(s, &plan, &grid).unwrap())
        });
    }
    group.finish();
}

fn pce_coefficient(c: &mut Criterion) {
    let sample = fig31_sample(100);
    let cfg = PceConfig::new(255, 1.0 / 0.3).unwrap();
    let mut group = c.benchmark_group("pce");
    group.sample_size(10);
    group.bench_function("a_hat", |b| {
        b.iter(|| a_hat(&sample, laplace(), &cfg, black_box(3)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernel_eval, density_paths, pce_coefficient);
criterion_main!(benches);
