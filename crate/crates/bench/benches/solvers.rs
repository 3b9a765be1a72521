use criterion::{criterion_group, criterion_main, Criterion};

use hpo_core::function_spaces::{sample_grf, sample_sine, GrfSampler};
use hpo_core::pde_oracles::{solve_burgers, solve_reaction_diffusion};
use hpo_core::{GrfSpec, SystemParams};

fn solvers(c: &mut Criterion) {
    let f = sample_sine(3, 5).unwrap();
    c.bench_function("solve_reaction_diffusion", |b| {
        b.iter(|| solve_reaction_diffusion(&f, SystemParams::rd(0.01, 0.01)).unwrap())
    });
    let u0 = sample_grf(3, GrfSpec::new(0.2)).unwrap();
    c.bench_function("solve_burgers", |b| b.iter(|| solve_burgers(&u0, SystemParams::burgers(0.01)).unwrap()));
}

fn samplers(c: &mut Criterion) {
    let sampler = GrfSampler::new(GrfSpec::new(0.2)).unwrap();
    c.bench_function("grf_sample", |b| {
        let mut k = 0;
        b.iter(|| {
            k += 1;
            sampler.sample(k)
        })
    });
}

criterion_group!(benches, solvers, samplers);
criterion_main!(benches);
