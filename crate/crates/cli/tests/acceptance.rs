//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure. Run with `cargo test -p mosyn-cli --test acceptance`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mosyn_cli::commands::{cmd_generate, cmd_train, GenerateArgs, TrainArgs, CHECKPOINT};
use mosyn_core::metrics::{
    coverage_single, default_epsilon, local_diversity, pnn, pnn_bruteforce, pnn_rescore, COVERAGE_WINDOW,
    DIVERSITY_WINDOW, PNN_MIN_SEGMENT,
};
use mosyn_core::motion::{forward_kinematics, parse_bvh, write_bvh, EulerOrder, Joint, Motion, Skeleton};
use mosyn_core::oracle::{central_difference, max_relative_error, RandomConvNet};
use mosyn_core::synthesis::{generate, generate_conditional, InteractiveSession};
use mosyn_core::synthetic::{
    hexapod_skeleton, humanoid_skeleton, quadruped_skeleton, random_motion, sine_walk, sine_walk_skeleton,
};
use mosyn_core::tensor::{Tape, Tensor, Var};
use mosyn_core::training::losses::{contact_loss, contact_sigmoid};
use mosyn_core::training::{train, train_conditional, ConstraintPreset, TrainConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const FIXTURES: [&str; 4] = ["humanoid.bvh", "quadruped.bvh", "hexapod.bvh", "sine_walk.bvh"];

fn load(name: &str) -> (Skeleton, Motion) {
    parse_bvh(&std::fs::read_to_string(fixture(name)).expect("fixture")).expect("fixture parses")
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn conv_gradients(net: &RandomConvNet) -> f64 {
    let mut tape = Tape::new();
    let x = tape.leaf(net.input.clone());
    let p: Vec<Var> = net.params.iter().map(|t| tape.leaf(t.clone())).collect();
    let mut wrt = vec![x];
    wrt.extend(&p);
    let (out, _) = net.forward(&mut tape, x, &p);
    let analytic = tape.backward(out, &wrt).expect("backward").into_vec();
    let mut all = vec![net.input.clone()];
    all.extend(net.params.iter().cloned());
    let numeric = central_difference(&all, 1e-5, |ps| net.eval(&ps[0], &ps[1..]));
    max_relative_error(&analytic, &numeric, 1e-6)
}

fn penalty(net: &RandomConvNet, params: &[Tensor]) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let x = tape.leaf(net.input.clone());
    let p: Vec<Var> = params.iter().map(|t| tape.leaf(t.clone())).collect();
    let (out, _) = net.forward(&mut tape, x, &p);
    let gx = tape.grad_graph(out, &[x]).expect("gradient graph")[0];
    let norm = tape.norm(gx);
    let shifted = tape.add_const(norm, -1.0);
    let pen = tape.square(shifted);
    let value = tape.value(pen).item();
    (value, tape.backward(pen, &p).expect("backward").into_vec())
}

fn autodiff() -> Outcome {
    let clock = Instant::now();
    let (mut nets, mut worst, mut seed) = (0, 0.0f64, 0u64);
    while nets < 100 {
        let net = RandomConvNet::sample(seed, 4);
        seed += 1;
        if net.kink_margin() < 1e-3 {
            continue;
        }
        worst = worst.max(conv_gradients(&net));
        nets += 1;
    }
    let (mut gp_nets, mut gp_worst) = (0, 0.0f64);
    while gp_nets < 100 {
        let net = RandomConvNet::sample(seed, 4);
        seed += 1;
        if net.kink_margin() < 1e-3 {
            continue;
        }
        let (_, analytic) = penalty(&net, &net.params);
        let numeric = central_difference(&net.params, 1e-5, |ps| penalty(&net, ps).0);
        gp_worst = gp_worst.max(max_relative_error(&analytic, &numeric, 1e-6));
        gp_nets += 1;
    }
    let t = clock.elapsed();
    check(
        worst < 1e-4 && gp_worst < 1e-3 && within(t, Duration::from_secs(120)),
        format!(
            "{nets} nets max rel err {worst:.2e}; {gp_nets} penalty nets max rel err {gp_worst:.2e}; {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn pnn_exactness() -> Outcome {
    let clock = Instant::now();
    let skel = sine_walk_skeleton();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut mismatches, mut infeasible) = (0, 0);
    for i in 0..1000u64 {
        let min_seg = rng.random_range(2..=3usize);
        let lq = rng.random_range(min_seg..=12);
        let lt = rng.random_range(min_seg..=20);
        let q = random_motion(&skel, lq, 40.0, 2 * i);
        let t = random_motion(&skel, lt, 40.0, 2 * i + 1);
        match (pnn(&q, &t, min_seg), pnn_bruteforce(&q, &t, min_seg)) {
            (Ok(dp), Ok(brute)) => {
                let rescored = pnn_rescore(&q, &t, &dp.segments).expect("rescore");
                if dp.cost != brute || rescored != dp.cost {
                    mismatches += 1;
                }
            }
            // Both must agree that no segmentation exists.
            (Err(_), Err(_)) => infeasible += 1,
            _ => mismatches += 1,
        }
    }
    let t = clock.elapsed();
    check(
        mismatches == 0 && within(t, Duration::from_secs(60)),
        format!(
            "1000 instances ({infeasible} infeasible, agreed), {mismatches} mismatches; {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn metric_fixed_points() -> Outcome {
    let mut bad = Vec::new();
    for name in FIXTURES {
        let (skel, m) = load(name);
        let cov = coverage_single(&m, &m, default_epsilon(skel.num_joints()), COVERAGE_WINDOW).expect("coverage");
        let p = pnn(&m, &m, PNN_MIN_SEGMENT).expect("pnn");
        let identity = p.labels.iter().enumerate().all(|(i, &l)| i == l);
        let div = local_diversity(&m, &m, DIVERSITY_WINDOW).expect("diversity");
        if cov != 1.0 || p.cost != 0.0 || !identity || div != 0.0 {
            bad.push(format!("{name}: coverage {cov}, pnn {}, identity {identity}, diversity {div}", p.cost));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() { format!("{} files exact", FIXTURES.len()) } else { bad.join("; ") },
    )
}

/// Largest joint position difference, matching joints by name since BVH
/// files list joints depth-first.
fn max_fk_deviation(skel_a: &Skeleton, a: &Motion, skel_b: &Skeleton, b: &Motion) -> f64 {
    let (fa, fb) = (forward_kinematics(skel_a, a).expect("fk"), forward_kinematics(skel_b, b).expect("fk"));
    let pairs: Vec<(usize, usize)> = skel_a
        .joints
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let k = skel_b.joints.iter().position(|o| o.name == j.name).expect("same joint names");
            (i, k)
        })
        .collect();
    fa.iter()
        .zip(&fb)
        .flat_map(|(x, y)| pairs.iter().map(move |&(i, k)| (x[i] - y[k]).amax()))
        .fold(0.0, f64::max)
}

fn fk_round_trip() -> Outcome {
    // Fixtures were written from these in-memory motions.
    let sources = [
        (humanoid_skeleton(), 1u64),
        (quadruped_skeleton(), 2),
        (hexapod_skeleton(), 3),
    ];
    let (mut file_worst, mut source_worst) = (0.0f64, 0.0f64);
    for (name, (src_skel, seed)) in FIXTURES[..3].iter().zip(sources) {
        let (skel, m) = load(name);
        let text = write_bvh(&skel, &m).expect("write");
        let (skel2, m2) = parse_bvh(&text).expect("reparse");
        file_worst = file_worst.max(max_fk_deviation(&skel, &m, &skel2, &m2));
        let original = random_motion(&src_skel, m.frames(), 30.0, seed);
        source_worst = source_worst.max(max_fk_deviation(&src_skel, &original, &skel2, &m2));
    }
    check(
        file_worst < 1e-6 && source_worst < 1e-6,
        format!(
            "humanoid, quadruped, hexapod: parse-write-parse {file_worst:.2e}, vs unquantized source {source_worst:.2e}"
        ),
    )
}

fn streaming() -> Outcome {
    let (skel, clip) = sine_walk(160);
    let cfg = TrainConfig {
        levels: 4,
        iterations_per_level: 0,
        seed: 5,
        constraint_pool: 2,
        ..TrainConfig::default()
    };
    let base = train(&cfg, &skel, std::slice::from_ref(&clip), &mut |_| {}).expect("base");
    let channels = ConstraintPreset::Root.channels(&skel);
    let model = train_conditional(&cfg, &skel, std::slice::from_ref(&clip), &channels, &base, &mut |_| {})
        .expect("conditional");
    let model = Arc::new(model);
    let total: usize = 500;
    let parts: Vec<&Motion> = std::iter::repeat_n(&clip, total.div_ceil(clip.frames())).collect();
    let long = Motion::concat(&parts).slice(0, total);
    let cons = model.constraint_channels.as_ref().expect("conditional");
    let rows = Tensor::matrix(
        cons.len(),
        total,
        cons.iter().flat_map(|&c| long.features().row(c).to_vec()).collect(),
    )
    .expect("rows");
    let seed = 9;
    let oneshot = generate_conditional(&model, &rows, seed).expect("one-shot").into_features();
    let r = model.halved_receptive_field();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut failures, mut compared) = (0, 0usize);
    for _ in 0..20 {
        let mut cuts: Vec<usize> = (0..rng.random_range(1..8)).map(|_| rng.random_range(1..total)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut session = InteractiveSession::new(model.clone()).expect("session");
        let mut out = Vec::new();
        let mut prev = 0;
        for &c in cuts.iter().chain(std::iter::once(&total)) {
            out.push(session.extend(&rows.slice_cols(prev, c), seed).expect("extend").motion.into_features());
            prev = c;
        }
        out.push(session.finish(seed).expect("finish").motion.into_features());
        let refs: Vec<&Tensor> = out.iter().collect();
        let streamed = Tensor::concat_cols(&refs);
        let mut equal = streamed.cols() == total;
        for t in 0..total {
            if !equal || cuts.iter().any(|&s| t.abs_diff(s) < r) || total - t <= r {
                continue;
            }
            compared += 1;
            equal = (0..streamed.rows()).all(|ch| streamed.at(ch, t) == oneshot.at(ch, t));
        }
        if !equal {
            failures += 1;
        }
    }
    check(
        failures == 0,
        format!("20 chunkings of {total} frames, r = {r}, {compared} frames compared, {failures} failing"),
    )
}

fn smoke_gate() -> Outcome {
    let clock = Instant::now();
    let (skel, clip) = sine_walk(160);
    let cfg = TrainConfig {
        levels: 4,
        iterations_per_level: 500,
        seed: 0,
        ..TrainConfig::default()
    };
    let finest = cfg.levels;
    let (mut first, mut last, mut finite) = (None, None, true);
    let model = train(&cfg, &skel, std::slice::from_ref(&clip), &mut |t| {
        let values = [t.critic, t.penalty, t.d_real, t.d_fake, t.adversarial, t.reconstruction, t.contact];
        finite &= values.iter().all(|v| v.is_finite());
        if t.level == finest {
            first.get_or_insert(t.reconstruction);
            last = Some(t.reconstruction);
        }
    });
    let model = match model {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(format!("training failed: {e}")),
    };
    let (first, last) = (first.unwrap_or(f64::NAN), last.unwrap_or(f64::NAN));
    let drop = 1.0 - last / first;
    let sample = generate(&model, 320, 1).expect("sample");
    let eps = default_epsilon(skel.num_joints());
    let cov = coverage_single(&sample, &clip, eps, COVERAGE_WINDOW).expect("coverage");
    let t = clock.elapsed();
    check(
        drop >= 0.5 && finite && cov >= 0.6 && within(t, Duration::from_secs(900)),
        format!(
            "finest L_rec {first:.4} -> {last:.4} ({:.0}% drop), losses finite {finite}, coverage {:.1}% at eps {eps}; {:.0}s",
            100.0 * drop,
            100.0 * cov,
            t.as_secs_f64()
        ),
    )
}

fn contact_closed_form() -> Outcome {
    let joint = |name: &str, parent, offset| Joint {
        name: name.into(),
        parent,
        offset,
        rotation_order: EulerOrder::Xyz,
    };
    let skel = Skeleton::new(
        vec![joint("root", None, [0.0; 3]), joint("foot", Some(0), [0.0, -1.0, 0.0])],
        vec![],
        vec![1],
        1.0,
    )
    .expect("skeleton");
    let mut m = Motion::rest(2, 1, 2);
    m.set_root_pos(1, Vector3::new(2.0, 0.0, 0.0));
    m.set_contact(0, 0, 1.0);
    m.set_contact(1, 0, 1.0);
    let mut tape = Tape::new();
    let x = tape.leaf(m.features().clone());
    let l = contact_loss(&mut tape, &skel, x, 1.0).expect("feet present");
    let got = tape.value(l).item();
    let expected = 4.0 / (1.0 + (-5.0f64).exp());
    let mid = contact_sigmoid(0.5);
    check(
        (got - expected).abs() < 1e-9 && mid == 0.5,
        format!("loss {got:.12} vs {expected:.12}, s(0.5) = {mid}"),
    )
}

fn determinism() -> Outcome {
    let run = |dir: &Path| -> anyhow::Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
        cmd_train(&TrainArgs {
            input: vec![fixture("sine_walk.bvh")],
            config: None,
            out: dir.to_path_buf(),
            conditional: None,
            base: None,
            iterations: Some(20),
            levels: Some(4),
            seed: Some(13),
            feet: None,
        })?;
        let out = dir.join("sample.bvh");
        cmd_generate(&GenerateArgs {
            checkpoint: dir.join(CHECKPOINT),
            length: Some(320),
            seed: 4,
            out: out.clone(),
            reconstruction: false,
            no_ik: false,
        })?;
        Ok((
            std::fs::read(dir.join(CHECKPOINT))?,
            std::fs::read(dir.join("telemetry.jsonl"))?,
            std::fs::read(out)?,
        ))
    };
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    match (run(a.path()), run(b.path())) {
        (Ok(x), Ok(y)) => check(
            x == y,
            format!(
                "checkpoint {} B, telemetry {} B, sample {} B identical: {}",
                x.0.len(),
                x.1.len(),
                x.2.len(),
                x == y
            ),
        ),
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(format!("{e:#}")),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("autodiff correctness", autodiff),
        ("pnn dp exactness", pnn_exactness),
        ("metric fixed points", metric_fixed_points),
        ("fk + bvh round trip", fk_round_trip),
        ("streaming invariant", streaming),
        ("training smoke gate", smoke_gate),
        ("contact loss closed form", contact_closed_form),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let clock = Instant::now();
        let line = match f() {
            Outcome::Pass(d) => format!("PASS {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                format!("FAIL {name}: {d}")
            }
            Outcome::Skip(d) => format!("SKIP {name}: {d}"),
        };
        println!("{line} [{:.1}s]", clock.elapsed().as_secs_f64());
    }
    if let Outcome::Skip(d) = long_run() {
        println!("SKIP long-run target: {d}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn long_run() -> Outcome {
    Outcome::Skip(
        "7 levels at 15000 iterations each on a ~300 frame clip takes hours; run `mosyn train --levels 7 \
         --iterations 15000` then `mosyn eval` and expect coverage >= 90% with nonzero local diversity"
            .into(),
    )
}
