use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use fzsl_core::numerics::{critic_objective, mlp_backward, mlp_forward, GanArch, GanModel, Matrix};
use fzsl_core::RngStream;

fn arch() -> GanArch {
    GanArch {
        feature_dim: 32,
        attr_dim: 16,
        condition_dim: 16,
        noise_dim: 16,
        hidden_dim: 64,
    }
}

fn matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(rows, cols, rng.normals(rows * cols)).unwrap()
}

fn bench_mlp(c: &mut Criterion) {
    let mut rng = RngStream::from_seed(0, "bench");
    let model = GanModel::<f32>::init(arch(), &mut rng).unwrap();
    let input = matrix(64, 32, &mut rng);
    let upstream = matrix(64, 32, &mut rng);
    c.bench_function("generator forward 64x32", |b| {
        b.iter(|| mlp_forward(black_box(&model.generator), black_box(&input)).unwrap())
    });
    c.bench_function("generator backward 64x32", |b| {
        b.iter(|| {
            mlp_backward(
                black_box(&model.generator),
                black_box(&input),
                black_box(&upstream),
            )
            .unwrap()
        })
    });
}

fn bench_critic(c: &mut Criterion) {
    let mut rng = RngStream::from_seed(1, "bench");
    let model = GanModel::<f32>::init(arch(), &mut rng).unwrap();
    let real = matrix(64, 32, &mut rng);
    let fake = matrix(64, 32, &mut rng);
    let a_g = matrix(64, 16, &mut rng);
    let mix: Vec<f32> = (0..64).map(|_| rng.uniform()).collect();
    c.bench_function("critic objective with penalty, batch 64", |b| {
        b.iter(|| {
            critic_objective(
                &model.discriminator,
                &real,
                &fake,
                &a_g,
                black_box(&mix),
                10.0,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_mlp, bench_critic);
criterion_main!(benches);
