//! Criterion benchmarks for the numeric kernels: group exp/log and bracket
//! evaluation, ODE path lifts, and whole-spec load/compile (which includes
//! the construction-time pipeline transports and sampled guards).

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pbglab::holonomy::holonomy;
use pbglab::io;
use pbglab::liegroup::{random_algebra, random_element, su2};
use pbglab::presets;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_group_kernels(c: &mut Criterion) {
    let group = su2();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_algebra(&group, &mut rng, 0.8);
    let w = random_algebra(&group, &mut rng, 0.8);
    let g = random_element(&group, &mut rng, 0.8);

    c.bench_function("su2_exp_log_roundtrip", |b| {
        b.iter(|| black_box(&v).exp().log().unwrap())
    });
    c.bench_function("su2_bracket", |b| {
        b.iter(|| black_box(&v).bracket(black_box(&w)).unwrap())
    });
    c.bench_function("su2_adjoint_action", |b| {
        b.iter(|| black_box(&g).ad(black_box(&v)).unwrap())
    });
    c.bench_function("su2_renormalize", |b| {
        b.iter(|| black_box(&g).renormalize().unwrap())
    });
}

fn bench_lift_kernels(c: &mut Criterion) {
    let spec = io::spec_from_str(presets::named("holonomy-square").unwrap()).unwrap();
    let compiled = io::compile(&spec).unwrap();
    let conn = compiled.connection.as_ref().expect("spec has a connection");
    let path = &compiled.loops[0].path;

    let mut group = c.benchmark_group("lift");
    group.sample_size(30);
    for steps in [64usize, 256, 1024] {
        group.bench_function(format!("square_holonomy_{steps}_steps"), |b| {
            b.iter(|| holonomy(black_box(conn), black_box(path), steps).unwrap())
        });
    }
    group.finish();
}

fn bench_spec_pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("spec");
    group.sample_size(10);
    for name in ["transition-pipeline", "hopf"] {
        let text = presets::named(name).unwrap();
        group.bench_function(format!("load_compile_{name}"), |b| {
            b.iter(|| io::spec_from_str(black_box(text)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(
    kernels,
    bench_group_kernels,
    bench_lift_kernels,
    bench_spec_pipeline
);
criterion_main!(kernels);
