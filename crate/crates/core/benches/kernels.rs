//! Sequential vs rayon execution of the data-parallel kernels. Results are
//! bit-identical in both modes; only wall time differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splitjscc::baseline::simulate_ber;
use splitjscc::parallel::{set_exec_mode, ExecMode};
use splitjscc::tensor::kernels::{conv2d_backward, conv2d_forward};
use splitjscc::tensor::{ConvGeom, Tensor};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f32>::randn(&[16, 32, 32, 32], 1.0, &mut rng);
    let w = Tensor::<f32>::randn(&[64, 32, 3, 3], 0.1, &mut rng);
    let b = Tensor::<f32>::zeros(&[64]);
    let g = ConvGeom::new(1, 1, 1);
    let dy = vec![1.0f32; 16 * 64 * 32 * 32];
    let mut group = c.benchmark_group("conv2d 16x32x32x32 -> 64");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new("forward", name), |bch| {
            set_exec_mode(mode);
            bch.iter(|| conv2d_forward(&x, &w, Some(&b), g).unwrap())
        });
        group.bench_function(BenchmarkId::new("backward", name), |bch| {
            set_exec_mode(mode);
            bch.iter(|| conv2d_backward(&x, &w, &dy, g, [true, true, true]).unwrap())
        });
    }
    group.finish();
    set_exec_mode(ExecMode::Parallel);
}

fn ber(c: &mut Criterion) {
    let mut group = c.benchmark_group("coded BER, 2^18 bits at 4 dB");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(name, |bch| {
            set_exec_mode(mode);
            bch.iter(|| simulate_ber(4.0, 1 << 18, true, 7))
        });
    }
    group.finish();
    set_exec_mode(ExecMode::Parallel);
}

criterion_group!(benches, conv, ber);
criterion_main!(benches);
