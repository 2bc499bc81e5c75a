use criterion::{criterion_group, criterion_main, Criterion};
use distal_lab::cocycles::{cocycle_metric, parse_cocycle, power_pieces};
use distal_lab::diagnostics::{birkhoff_score, standard_family};
use distal_lab::rng::seeded;
use distal_lab::systems::golden_rotation;
use distal_lab::towers::{build_tower, purify, DEFAULT_COLUMN_CAP};
use distal_lab::{verify_randomp, BoxSet, Cuboid, Group};
use std::hint::black_box;

fn cocycle_kernels(c: &mut Criterion) {
    let base = golden_rotation();
    let g = Group::torus(1);
    let phi = parse_cocycle("cells:[(0,0.3):0.1,(0.3,0.55):0.5,(0.7,0.9):0.25]", 1, &g).unwrap();
    let psi = parse_cocycle("cells:[(0.1,0.4):0.12,(0.5,0.8):0.45]", 1, &g).unwrap();
    c.bench_function("power_pieces n=200", |b| {
        b.iter(|| power_pieces(black_box(&phi), &base, 200, &Cuboid::full(1)).unwrap())
    });
    c.bench_function("cocycle_metric", |b| b.iter(|| cocycle_metric(black_box(&phi), black_box(&psi)).unwrap()));
}

fn tower_kernels(c: &mut Criterion) {
    let base = golden_rotation();
    let g = Group::torus(1);
    let phi = parse_cocycle("cells:[(0,0.3):0.1,(0.3,0.55):0.5]", 1, &g).unwrap();
    c.bench_function("build_tower h=101", |b| b.iter(|| build_tower(&base, black_box(101), 0.01).unwrap()));
    let tower = build_tower(&base, 101, 0.01).unwrap();
    let cset = BoxSet::full(1);
    c.bench_function("purify h=101", |b| {
        b.iter(|| purify(black_box(&tower), &base, &phi, &cset, DEFAULT_COLUMN_CAP).unwrap())
    });
}

fn diagnostic_kernels(c: &mut Criterion) {
    let base = golden_rotation();
    let family = standard_family(1, None);
    c.bench_function("birkhoff n=1e4 x4 starts", |b| {
        b.iter(|| birkhoff_score(&base, &family, 10_000, 4, &mut seeded(1)).unwrap())
    });
    c.bench_function("verify_randomp N=200 x1000", |b| b.iter(|| verify_randomp(0.5, 200, 1000, &mut seeded(2)).unwrap()));
}

criterion_group!(benches, cocycle_kernels, tower_kernels, diagnostic_kernels);
criterion_main!(benches);
