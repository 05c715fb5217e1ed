use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vcoach_core::analytics::mann_whitney_u;
use vcoach_core::metrics::convex_hull_volume;
use vcoach_core::{default_task_config, synth_session, CoachingMode, Engine, SynthProfile, Vec3};

fn engine_tick(c: &mut Criterion) {
    let cfg = default_task_config();
    let log = synth_session(&SynthProfile::expert(), &cfg, CoachingMode::Teach, 1).unwrap();
    let inputs: Vec<_> = log.ticks().map(|t| t.input()).take(2000).collect();
    c.bench_function("engine 2000 ticks (teach)", |b| {
        b.iter(|| {
            let mut e = Engine::new(cfg.clone(), log.header.engine_options()).unwrap();
            for i in &inputs {
                black_box(e.tick(i).unwrap());
            }
        })
    });
}

fn hull(c: &mut Criterion) {
    // A smooth helix, the shape of a master trajectory.
    let pts: Vec<Vec3> = (0..8000)
        .map(|i| {
            let t = i as f64 * 0.01;
            Vec3::new(30.0 * t.cos(), 20.0 * t.sin(), 0.5 * t)
        })
        .collect();
    c.bench_function("hull 8000 helix points", |b| b.iter(|| convex_hull_volume(black_box(&pts))));
}

fn mwu(c: &mut Criterion) {
    let a: Vec<f64> = (0..14).map(|i| (i * 7 % 11) as f64 + 0.5).collect();
    let b: Vec<f64> = (0..16).map(|i| (i * 5 % 13) as f64).collect();
    c.bench_function("mann-whitney 14 vs 16", |bn| bn.iter(|| mann_whitney_u(black_box(&a), black_box(&b))));
    let small = ([1.0, 4.0, 6.0, 9.0, 11.0, 12.0], [2.0, 3.0, 5.0, 7.0, 8.0, 10.0]);
    c.bench_function("mann-whitney exact 6 vs 6", |bn| bn.iter(|| mann_whitney_u(black_box(&small.0), black_box(&small.1))));
}

criterion_group!(benches, engine_tick, hull, mwu);
criterion_main!(benches);
