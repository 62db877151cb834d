use serde::{Deserialize, Serialize};

use super::{Motion, MotionError};
use crate::tensor::{SparseMap, Tensor};

/// Minimum length of the coarsest pyramid level.
pub const MIN_LEVEL_FRAMES: usize = 8;

/// Endpoint-aligned linear interpolation from `t_in` to `t_out` frames as a
/// time map.
pub fn resample_map(t_in: usize, t_out: usize) -> SparseMap {
    assert!(t_in >= 1 && t_out >= 1, "resample lengths must be positive");
    let points = (0..t_out)
        .map(|o| {
            if t_out == 1 || t_in == 1 {
                return (0, 0, 0.0);
            }
            let p = (o * (t_in - 1)) as f64 / (t_out - 1) as f64;
            let lo = (p.floor() as usize).min(t_in - 1);
            let f = p - lo as f64;
            if lo + 1 >= t_in || f == 0.0 {
                (lo, lo, 0.0)
            } else {
                (lo, lo + 1, f)
            }
        })
        .collect();
    SparseMap::lerp(t_in, points)
}

/// Resamples every row of a `[C × T]` tensor.
pub fn resample_tensor(x: &Tensor, t_out: usize) -> Tensor {
    let map = resample_map(x.cols(), t_out);
    let mut data = Vec::with_capacity(x.rows() * t_out);
    for r in 0..x.rows() {
        data.extend(map.apply(x.row(r)));
    }
    Tensor::matrix(x.rows(), t_out, data).expect("resample shape")
}

pub fn resample(motion: &Motion, t_target: usize) -> Result<Motion, MotionError> {
    if t_target < 2 {
        return Err(MotionError::Invalid(format!("resample target {t_target} is below 2 frames")));
    }
    Motion::from_features(
        resample_tensor(motion.features(), t_target),
        motion.num_joints(),
        motion.num_feet(),
    )
}

/// `T_i = round(T_S · F^{i−S})` for `i = 1..=S`.
pub fn level_lengths(t_s: usize, factor: f64, levels: usize) -> Result<Vec<usize>, MotionError> {
    if levels < 2 {
        return Err(MotionError::Invalid(format!("pyramid needs at least 2 levels, got {levels}")));
    }
    if !(factor > 1.0) {
        return Err(MotionError::Invalid(format!("scale factor {factor} must exceed 1")));
    }
    let lengths: Vec<usize> = (1..=levels)
        .map(|i| (t_s as f64 * factor.powi(i as i32 - levels as i32)).round() as usize)
        .collect();
    if lengths[0] < MIN_LEVEL_FRAMES {
        return Err(MotionError::TooShort(format!(
            "coarsest level has {} frames (minimum {MIN_LEVEL_FRAMES})",
            lengths[0]
        )));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MotionError::Invalid(format!("level lengths {lengths:?} are not strictly increasing")));
    }
    Ok(lengths)
}

/// Training pyramid: downsampled copies of the source plus per-level noise
/// amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pyramid {
    #[serde(skip)]
    pub levels: Vec<Motion>,
    pub lengths: Vec<usize>,
    pub sigma: Vec<f64>,
    pub factor: f64,
}

impl Pyramid {
    pub fn num_levels(&self) -> usize {
        self.lengths.len()
    }
}

/// Builds the pyramid; `σ_1 = 1` and `σ_i` is the mean squared residual of
/// upsampling level `i−1` to level `i`.
pub fn build_pyramid(motion: &Motion, factor: f64, levels: usize) -> Result<Pyramid, MotionError> {
    let lengths = level_lengths(motion.frames(), factor, levels)?;
    let mut out = Vec::with_capacity(levels);
    for &t in &lengths {
        out.push(resample(motion, t)?);
    }
    let mut sigma = vec![1.0];
    for i in 1..levels {
        let up = resample_tensor(out[i - 1].features(), lengths[i]);
        let target = out[i].features();
        let sq: f64 = up.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        sigma.push(sq / target.len() as f64);
    }
    Ok(Pyramid {
        levels: out,
        lengths,
        sigma,
        factor,
    })
}
