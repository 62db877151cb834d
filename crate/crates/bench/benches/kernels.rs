use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mosyn_core::graph::MotionGraph;
use mosyn_core::metrics::pnn;
use mosyn_core::networks::{broadcast_noise, generator_level, NetConfig, StackSpec};
use mosyn_core::synthesis::generate;
use mosyn_core::synthetic::{humanoid_skeleton, random_motion, sine_walk};
use mosyn_core::tensor::{Tape, Var};
use mosyn_core::training::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generator_pass(c: &mut Criterion) {
    let skel = humanoid_skeleton();
    let graph = MotionGraph::build(&skel);
    let spec = StackSpec::generator(&graph, &NetConfig::default());
    let masks = spec.tape_masks();
    let stack = spec.init(&mut ChaCha8Rng::seed_from_u64(0));
    let motion = random_motion(&skel, 120, 30.0, 1);
    let width = motion.width();
    let noise = broadcast_noise(&vec![0.1; 120], 1.0, width);

    let record = |tape: &mut Tape| -> (Var, Vec<Var>) {
        let params = stack.leaves(tape);
        let prev = tape.leaf(motion.features().clone());
        let z = tape.leaf(noise.clone());
        let out = generator_level(tape, &spec, &masks, &params, Some(prev), z, None);
        (tape.mean(out), params)
    };
    let mut group = c.benchmark_group("generator_level_humanoid_120");
    group.bench_function("forward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            black_box(record(&mut tape).0);
        })
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (out, params) = record(&mut tape);
            black_box(tape.backward(out, &params).unwrap());
        })
    });
    group.finish();
}

fn pnn_dp(c: &mut Criterion) {
    let skel = humanoid_skeleton();
    let t = random_motion(&skel, 300, 30.0, 2);
    let mut group = c.benchmark_group("pnn");
    for lq in [150usize, 300] {
        let q = random_motion(&skel, lq, 30.0, 3);
        group.bench_with_input(BenchmarkId::from_parameter(lq), &q, |b, q| {
            b.iter(|| black_box(pnn(q, &t, 30).unwrap().cost))
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let (skel, clip) = sine_walk(160);
    let cfg = TrainConfig {
        levels: 4,
        iterations_per_level: 0,
        ..TrainConfig::default()
    };
    let model = train(&cfg, &skel, std::slice::from_ref(&clip), &mut |_| {}).unwrap();
    c.bench_function("generate_sine_walk_640", |b| {
        b.iter(|| black_box(generate(&model, 640, 7).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = generator_pass, pnn_dp, generation
}
criterion_main!(benches);
