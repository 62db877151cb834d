use std::sync::Arc;

use mosyn_core::model::{CheckpointError, Model};
use mosyn_core::motion::{build_pyramid, Motion};
use mosyn_core::synthesis::{
    generate, generate_conditional, keyframe_edit, reconstruct, style_transfer, InteractiveSession, SynthesisError,
};
use mosyn_core::synthetic::sine_walk;
use mosyn_core::tensor::Tensor;
use mosyn_core::training::{train, train_conditional, ConstraintPreset, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(iterations: usize) -> TrainConfig {
    TrainConfig {
        levels: 4,
        iterations_per_level: iterations,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn base_model(iterations: usize) -> (Model, Motion) {
    let (skel, motion) = sine_walk(160);
    let model = train(&config(iterations), &skel, std::slice::from_ref(&motion), &mut |_| {}).unwrap();
    (model, motion)
}

fn conditional_model() -> (Model, Motion) {
    let (base, motion) = base_model(0);
    let channels = ConstraintPreset::Root.channels(&base.skeleton);
    let cfg = TrainConfig {
        constraint_pool: 2,
        ..config(0)
    };
    let model = train_conditional(&cfg, &base.skeleton, std::slice::from_ref(&motion), &channels, &base, &mut |_| {})
        .unwrap();
    (model, motion)
}

fn constraint_rows(model: &Model, m: &Motion) -> Tensor {
    let channels = model.constraint_channels.as_ref().unwrap();
    let t = m.frames();
    let data = channels.iter().flat_map(|&c| m.features().row(c).to_vec()).collect();
    Tensor::matrix(channels.len(), t, data).unwrap()
}

/// Long, smooth root track made of repeated clip copies.
fn long_constraints(model: &Model, clip: &Motion, frames: usize) -> Tensor {
    let reps = frames.div_ceil(clip.frames());
    let parts: Vec<&Motion> = std::iter::repeat_n(clip, reps).collect();
    let long = Motion::concat(&parts).slice(0, frames);
    constraint_rows(model, &long)
}

fn stream(model: &Arc<Model>, constraints: &Tensor, cuts: &[usize], seed: u64) -> Tensor {
    let mut session = InteractiveSession::new(model.clone()).unwrap();
    let mut parts = Vec::new();
    let mut prev = 0;
    for &c in cuts.iter().chain(std::iter::once(&constraints.cols())) {
        let chunk = session.extend(&constraints.slice_cols(prev, c), seed).unwrap();
        assert_eq!(chunk.start, parts.iter().map(|p: &Tensor| p.cols()).sum::<usize>());
        assert_eq!(session.displayed(), c.saturating_sub(session.withheld()));
        parts.push(chunk.motion.into_features());
        prev = c;
    }
    let tail = session.finish(seed).unwrap();
    parts.push(tail.motion.into_features());
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_cols(&refs)
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (model, _) = base_model(2);
    let bytes = model.to_bytes().unwrap();
    let back = Model::from_bytes(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    assert_eq!(Model::load(&path).unwrap(), model);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (model, _) = base_model(0);
    let bytes = model.to_bytes().unwrap();
    assert!(matches!(Model::from_bytes(b"XXXXX\0\0\0\0"), Err(CheckpointError::BadMagic)));
    assert!(matches!(
        Model::from_bytes(&bytes[..bytes.len() - 8]),
        Err(CheckpointError::Corrupt(_))
    ));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(Model::from_bytes(&extra), Err(CheckpointError::Corrupt(_))));
}

#[test]
fn training_is_deterministic() {
    let (a, _) = base_model(3);
    let (b, _) = base_model(3);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn telemetry_is_finite_and_covers_every_level() {
    let (skel, motion) = sine_walk(160);
    let mut seen = Vec::new();
    train(&config(4), &skel, &[motion], &mut |t| seen.push(t.clone())).unwrap();
    for level in 1..=4 {
        assert!(seen.iter().any(|t| t.level == level));
    }
    for t in &seen {
        for v in [t.critic, t.penalty, t.d_real, t.d_fake, t.adversarial, t.reconstruction, t.contact] {
            assert!(v.is_finite(), "{t:?}");
        }
    }
}

#[test]
fn recorded_reconstruction_error_matches_replay() {
    let (model, motion) = base_model(2);
    let rec = reconstruct(&model, 0);
    assert_eq!(rec.frames(), motion.frames());
    let err = rec.features().zip_map(motion.features(), |a, b| (a - b).abs()).sum() / motion.features().len() as f64;
    assert_eq!(err, model.reconstruction_error[0]);
}

#[test]
fn generate_is_deterministic_and_honours_length() {
    let (model, _) = base_model(1);
    let a = generate(&model, 320, 9).unwrap();
    let b = generate(&model, 320, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames(), 320);
    assert_ne!(generate(&model, 320, 10).unwrap(), a);
    assert!(matches!(generate(&model, 10, 0), Err(SynthesisError::TooShort { .. })));
}

#[test]
fn style_transfer_keeps_content_length() {
    let (model, _) = base_model(0);
    let (_, content) = sine_walk(203);
    let out = style_transfer(&model, &content, 1).unwrap();
    assert_eq!(out.frames(), 203);
}

#[test]
fn keyframe_edit_checks_length_and_is_deterministic() {
    let (model, motion) = base_model(1);
    let coarse = build_pyramid(&motion, model.factor(), model.num_levels()).unwrap().levels[0].clone();
    let a = keyframe_edit(&model, &coarse, true, 0).unwrap();
    let b = keyframe_edit(&model, &coarse, true, 0).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames(), motion.frames());
    let short = coarse.slice(0, coarse.frames() - 1);
    assert!(matches!(
        keyframe_edit(&model, &short, true, 0),
        Err(SynthesisError::CoarseLength { .. })
    ));
}

#[test]
fn keyframe_edit_change_stays_local() {
    let (model, motion) = base_model(0);
    let coarse = build_pyramid(&motion, model.factor(), model.num_levels()).unwrap().levels[0].clone();
    let mut edited = coarse.clone();
    let frame = coarse.frames() / 2;
    let mut pose = edited.rot6d(frame, 1);
    pose[1] += 0.3;
    edited.set_rot6d(frame, 1, &pose);
    let a = keyframe_edit(&model, &coarse, true, 0).unwrap();
    let b = keyframe_edit(&model, &edited, true, 0).unwrap();
    // Coarse sample `frame` sits at finest position frame·(T−1)/(T₁−1).
    let t = motion.frames();
    let centre = frame as f64 * (t - 1) as f64 / (coarse.frames() - 1) as f64;
    let reach = model.halved_receptive_field() as f64;
    for f in 0..t {
        let changed = (0..a.width()).any(|c| a.features().at(c, f) != b.features().at(c, f));
        if changed {
            assert!((f as f64 - centre).abs() <= reach, "frame {f} changed, centre {centre}");
        }
    }
}

#[test]
fn conditional_output_keeps_constraints_exactly() {
    let (model, motion) = conditional_model();
    let c = constraint_rows(&model, &motion);
    let a = generate_conditional(&model, &c, 1).unwrap();
    let b = generate_conditional(&model, &c, 2).unwrap();
    let channels = model.constraint_channels.clone().unwrap();
    for (r, &ch) in channels.iter().enumerate() {
        assert_eq!(a.features().row(ch), c.row(r));
        assert_eq!(b.features().row(ch), c.row(r));
    }
    let free = (0..a.width()).find(|c| !channels.contains(c)).unwrap();
    assert_ne!(a.features().row(free), b.features().row(free));
}

#[test]
fn conditional_rejects_wrong_rows() {
    let (model, motion) = conditional_model();
    let c = constraint_rows(&model, &motion);
    let bad = c.slice_cols(0, c.cols());
    let bad = Tensor::matrix(1, bad.cols(), bad.row(0).to_vec()).unwrap();
    assert!(matches!(
        generate_conditional(&model, &bad, 0),
        Err(SynthesisError::Constraints(_))
    ));
    let (base, _) = base_model(0);
    assert!(matches!(generate_conditional(&base, &c, 0), Err(SynthesisError::NotConditional)));
}

#[test]
fn single_frame_perturbation_stays_within_receptive_field() {
    let (model, motion) = conditional_model();
    let c = long_constraints(&model, &motion, 400);
    let a = generate_conditional(&model, &c, 3).unwrap();
    let r = model.halved_receptive_field();
    for &f in &[0usize, 57, 200, 399] {
        let mut p = c.clone();
        let v = p.at(0, f);
        p.set(0, f, v + 0.25);
        let b = generate_conditional(&model, &p, 3).unwrap();
        let mut widest = 0;
        for t in 0..c.cols() {
            if (0..a.width()).any(|ch| a.features().at(ch, t) != b.features().at(ch, t)) {
                widest = widest.max(t.abs_diff(f));
            }
        }
        assert!(widest < r, "perturbation at {f} reached {widest} frames, r = {r}");
    }
}

#[test]
fn streaming_matches_one_shot_outside_seams() {
    let (model, motion) = conditional_model();
    let model = Arc::new(model);
    let total = 500;
    let c = long_constraints(&model, &motion, total);
    let oneshot = generate_conditional(&model, &c, 4).unwrap().into_features();
    let r = model.halved_receptive_field();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..4 {
        let mut cuts: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(1..total)).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let streamed = stream(&model, &c, &cuts, 4);
        assert_eq!(streamed.cols(), total);
        for t in 0..total {
            let near_seam = cuts.iter().any(|&s| t.abs_diff(s) < r) || total - t <= r;
            if !near_seam {
                for ch in 0..streamed.rows() {
                    assert_eq!(streamed.at(ch, t), oneshot.at(ch, t), "frame {t}, cuts {cuts:?}");
                }
            }
        }
    }
}

#[test]
fn session_withholds_r_frames() {
    let (model, motion) = conditional_model();
    let model = Arc::new(model);
    let c = long_constraints(&model, &motion, 300);
    let mut session = InteractiveSession::new(model.clone()).unwrap();
    let r = session.withheld();
    assert_eq!(r, model.halved_receptive_field());
    let mut next = 0;
    for (a, b) in [(0, 30), (30, 150), (150, 151), (151, 300)] {
        let chunk = session.extend(&c.slice_cols(a, b), 0).unwrap();
        assert_eq!(chunk.start, next);
        next += chunk.motion.frames();
        assert_eq!(session.displayed(), b.saturating_sub(r));
        assert_eq!(next, session.displayed());
    }
    assert!(matches!(
        session.extend(&c.slice_cols(0, 0), 0),
        Err(SynthesisError::EmptyExtension)
    ));
}
