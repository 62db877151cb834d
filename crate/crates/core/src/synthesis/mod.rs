//! Inference: unconditional, conditional and streaming generation, style
//! transfer and coarse key-frame editing.
//!
//! Noise is keyed by `(seed, level, sample index)`, so any sample can be
//! redrawn without replaying the stream that produced it.

mod grid;
mod ik;

pub use grid::{generate_conditional, generate_on_grid, GridWindow, InteractiveSession, NoiseTable, StreamChunk};
pub use ik::{contact_runs, foot_ik_cleanup, IkConfig, IkReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::Model;
use crate::motion::{level_lengths, resample_tensor, Motion, MotionError};
use crate::networks::{broadcast_noise, Overwrite, StackSpec};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("requested length {got} is below the minimum of {min} frames")]
    TooShort { got: usize, min: usize },
    #[error("model is not conditional")]
    NotConditional,
    #[error("constraints: {0}")]
    Constraints(String),
    #[error("skeleton does not match the model")]
    SkeletonMismatch,
    #[error("coarse motion has {got} frames, expected {expected}")]
    CoarseLength { got: usize, expected: usize },
    #[error("extension must contain at least one frame")]
    EmptyExtension,
}

/// Standard-normal sample for `(seed, level, index)`.
pub fn keyed_normal(seed: u64, level: usize, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(level as u64);
    // 64 words per sample leaves room for rejection draws.
    rng.set_word_pos(index as u128 * 64);
    rng.sample(rand_distr::StandardNormal)
}

/// Per-level noise tracks `z_1..z_S` (unit variance; scaled by σ when used).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSet {
    pub seed: u64,
    pub tracks: Vec<Vec<f64>>,
}

impl NoiseSet {
    pub fn keyed(seed: u64, lengths: &[usize]) -> Self {
        Self {
            seed,
            tracks: lengths
                .iter()
                .enumerate()
                .map(|(i, &t)| (0..t).map(|n| keyed_normal(seed, i, n)).collect())
                .collect(),
        }
    }

    /// `z*` at the coarsest level and zeros elsewhere.
    pub fn reconstruction(model: &Model, sequence: usize) -> Self {
        let lengths = &model.lengths[sequence];
        let mut tracks = vec![model.z_star[sequence].clone()];
        tracks.extend(lengths[1..].iter().map(|&t| vec![0.0; t]));
        Self { seed: 0, tracks }
    }
}

/// Runs levels `first..S` with endpoint-aligned upsampling. `start` is the
/// output of level `first − 1` (required when `first > 0`).
pub fn run_chain(
    model: &Model,
    lengths: &[usize],
    first: usize,
    start: Option<Tensor>,
    noise: &NoiseSet,
    overwrites: Option<&[Overwrite]>,
) -> Tensor {
    let masks = model.generator_spec().tape_masks();
    let width = model.width();
    let mut prev = start;
    for i in first..model.num_levels() {
        let up = prev.as_ref().map(|p| resample_tensor(p, lengths[i]));
        let z = broadcast_noise(&noise.tracks[i], model.sigma[i], width);
        let ow = overwrites.map(|o| &o[i]);
        prev = Some(model.run_level(i, &masks, up.as_ref(), z, ow));
    }
    prev.expect("at least one level")
}

fn to_motion(model: &Model, x: Tensor) -> Motion {
    Motion::from_features(x, model.skeleton.num_joints(), model.skeleton.num_feet())
        .expect("generator output matches the skeleton")
}

/// Shortest length accepted by [`generate`].
pub fn min_length(model: &Model) -> usize {
    StackSpec::generator(&model.graph, &model.config.net).receptive_field()
}

/// Level lengths for an output of `out_length` frames.
pub fn output_lengths(model: &Model, out_length: usize) -> Result<Vec<usize>, SynthesisError> {
    let min = min_length(model);
    if out_length < min {
        return Err(SynthesisError::TooShort { got: out_length, min });
    }
    level_lengths(out_length, model.factor(), model.num_levels()).map_err(|e| match e {
        MotionError::TooShort(_) => SynthesisError::TooShort {
            got: out_length,
            min: (crate::motion::MIN_LEVEL_FRAMES as f64 * model.factor().powi(model.num_levels() as i32 - 1))
                .ceil() as usize,
        },
        other => other.into(),
    })
}

/// Unconditional sample of `out_length` frames.
pub fn generate(model: &Model, out_length: usize, seed: u64) -> Result<Motion, SynthesisError> {
    let lengths = output_lengths(model, out_length)?;
    let noise = NoiseSet::keyed(seed, &lengths);
    Ok(to_motion(model, run_chain(model, &lengths, 0, None, &noise, None)))
}

/// Full-chain output for the reconstruction noise of training sequence `k`.
pub fn reconstruct_with(model: &Model, k: usize, overwrites: Option<&[Overwrite]>) -> Tensor {
    let noise = NoiseSet::reconstruction(model, k);
    run_chain(model, &model.lengths[k], 0, None, &noise, overwrites)
}

pub fn reconstruct(model: &Model, k: usize) -> Motion {
    to_motion(model, reconstruct_with(model, k, None))
}

/// Replaces the coarsest level with the content clip and lets levels
/// `2..S` of the style model add detail with fresh noise.
pub fn style_transfer(model: &Model, content: &Motion, seed: u64) -> Result<Motion, SynthesisError> {
    content
        .check_skeleton(&model.skeleton)
        .map_err(|_| SynthesisError::SkeletonMismatch)?;
    let lengths = output_lengths(model, content.frames())?;
    let coarse = resample_tensor(content.features(), lengths[0]);
    let noise = NoiseSet::keyed(seed, &lengths);
    Ok(to_motion(model, run_chain(model, &lengths, 1, Some(coarse), &noise, None)))
}

/// Refines an edited coarsest-level motion (training length of sequence 0).
/// Deterministic mode uses zero noise; otherwise keyed noise from `seed`.
pub fn keyframe_edit(
    model: &Model,
    coarse: &Motion,
    deterministic: bool,
    seed: u64,
) -> Result<Motion, SynthesisError> {
    coarse
        .check_skeleton(&model.skeleton)
        .map_err(|_| SynthesisError::SkeletonMismatch)?;
    let lengths = &model.lengths[0];
    if coarse.frames() != lengths[0] {
        return Err(SynthesisError::CoarseLength {
            got: coarse.frames(),
            expected: lengths[0],
        });
    }
    let noise = if deterministic {
        NoiseSet {
            seed,
            tracks: lengths.iter().map(|&t| vec![0.0; t]).collect(),
        }
    } else {
        NoiseSet::keyed(seed, lengths)
    };
    Ok(to_motion(
        model,
        run_chain(model, lengths, 1, Some(coarse.features().clone()), &noise, None),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_noise_is_stable_and_distinct() {
        assert_eq!(keyed_normal(7, 2, 100), keyed_normal(7, 2, 100));
        assert_ne!(keyed_normal(7, 2, 100), keyed_normal(7, 2, 101));
        assert_ne!(keyed_normal(7, 2, 100), keyed_normal(7, 3, 100));
        assert_ne!(keyed_normal(7, 2, 100), keyed_normal(8, 2, 100));
    }

    #[test]
    fn keyed_noise_is_standard_normal() {
        let xs: Vec<f64> = (0..20_000).map(|n| keyed_normal(1, 0, n)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
