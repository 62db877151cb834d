//! Motion representation: per-frame joint rotations (6D), root position and
//! foot-contact labels, stored channel-major as a `[F0 × T]` matrix.
//!
//! Channel layout for `J` joints and `C` feet:
//! `[6·j, 6·j + 6)` rotation of joint `j`, then 3 root-position channels,
//! then one contact channel per foot.

mod bvh;
mod kinematics;
mod pyramid;
mod rotation;
mod skeleton;

pub use bvh::{parse_bvh, parse_bvh_with, write_bvh, BvhOptions};
pub use kinematics::{contact_labels, foot_speeds, forward_kinematics, global_rotations};
pub use pyramid::{
    build_pyramid, level_lengths, resample, resample_map, resample_tensor, Pyramid, MIN_LEVEL_FRAMES,
};
pub use rotation::{
    axis_rotation, euler_to_matrix, frobenius_sq, matrix_to_euler, matrix_to_rot6d, rot6d_to_matrix,
    DegenerateRotation, EulerOrder, IDENTITY_6D,
};
pub use skeleton::{EndSite, Joint, Skeleton};
pub(crate) use skeleton::hex;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::tensor::Tensor;

pub const ROT_FEATURES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("motion does not match skeleton: {0}")]
    Mismatch(String),
    #[error("sequence too short: {0}")]
    TooShort(String),
    #[error(transparent)]
    Degenerate(#[from] DegenerateRotation),
    #[error("BVH line {line}: {msg}")]
    Bvh { line: usize, msg: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// One motion clip in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    features: Tensor,
    joints: usize,
    feet: usize,
}

impl Motion {
    pub fn from_features(features: Tensor, joints: usize, feet: usize) -> Result<Self, MotionError> {
        if features.shape().len() != 2 || features.rows() != ROT_FEATURES * joints + 3 + feet {
            return Err(MotionError::Mismatch(format!(
                "features {:?} for {joints} joints and {feet} feet",
                features.shape()
            )));
        }
        if !features.all_finite() {
            return Err(MotionError::Invalid("non-finite feature values".into()));
        }
        Ok(Self {
            features,
            joints,
            feet,
        })
    }

    /// All-identity rotations, zero root position, zero contacts.
    pub fn rest(joints: usize, feet: usize, frames: usize) -> Self {
        let mut features = Tensor::zeros(&[ROT_FEATURES * joints + 3 + feet, frames]);
        for j in 0..joints {
            for t in 0..frames {
                features.set(ROT_FEATURES * j, t, 1.0);
                features.set(ROT_FEATURES * j + 4, t, 1.0);
            }
        }
        Self {
            features,
            joints,
            feet,
        }
    }

    pub fn frames(&self) -> usize {
        self.features.cols()
    }

    pub fn num_joints(&self) -> usize {
        self.joints
    }

    pub fn num_feet(&self) -> usize {
        self.feet
    }

    pub fn width(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn into_features(self) -> Tensor {
        self.features
    }

    pub fn rot_channel(joint: usize) -> usize {
        ROT_FEATURES * joint
    }

    pub fn root_pos_channel(&self) -> usize {
        ROT_FEATURES * self.joints
    }

    pub fn contact_channel(&self, foot: usize) -> usize {
        ROT_FEATURES * self.joints + 3 + foot
    }

    pub fn rot6d(&self, t: usize, joint: usize) -> [f64; 6] {
        let base = ROT_FEATURES * joint;
        std::array::from_fn(|k| self.features.at(base + k, t))
    }

    pub fn set_rot6d(&mut self, t: usize, joint: usize, f: &[f64; 6]) {
        let base = ROT_FEATURES * joint;
        for (k, v) in f.iter().enumerate() {
            self.features.set(base + k, t, *v);
        }
    }

    pub fn rotation(&self, t: usize, joint: usize) -> Result<Matrix3<f64>, MotionError> {
        Ok(rot6d_to_matrix(&self.rot6d(t, joint))?)
    }

    pub fn root_pos(&self, t: usize) -> Vector3<f64> {
        let c = self.root_pos_channel();
        Vector3::new(self.features.at(c, t), self.features.at(c + 1, t), self.features.at(c + 2, t))
    }

    pub fn set_root_pos(&mut self, t: usize, p: Vector3<f64>) {
        let c = self.root_pos_channel();
        for k in 0..3 {
            self.features.set(c + k, t, p[k]);
        }
    }

    pub fn contact(&self, t: usize, foot: usize) -> f64 {
        self.features.at(self.contact_channel(foot), t)
    }

    pub fn set_contact(&mut self, t: usize, foot: usize, v: f64) {
        let c = self.contact_channel(foot);
        self.features.set(c, t, v);
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            features: self.features.slice_cols(start, end),
            joints: self.joints,
            feet: self.feet,
        }
    }

    pub fn concat(parts: &[&Motion]) -> Self {
        let feats: Vec<&Tensor> = parts.iter().map(|m| &m.features).collect();
        Self {
            features: Tensor::concat_cols(&feats),
            joints: parts[0].joints,
            feet: parts[0].feet,
        }
    }

    /// Rotation matrices of every joint at every frame, `[t][j]`.
    pub fn rotation_matrices(&self) -> Result<Vec<Vec<Matrix3<f64>>>, MotionError> {
        (0..self.frames())
            .map(|t| (0..self.joints).map(|j| self.rotation(t, j)).collect())
            .collect()
    }

    /// Contact channels thresholded at 0.5.
    pub fn binarize_contacts(&mut self) {
        for f in 0..self.feet {
            let c = self.contact_channel(f);
            for v in self.features.row_mut(c) {
                *v = if *v >= 0.5 { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn check_skeleton(&self, skel: &Skeleton) -> Result<(), MotionError> {
        if skel.num_joints() != self.joints || skel.num_feet() != self.feet {
            return Err(MotionError::Mismatch(format!(
                "motion has {} joints/{} feet, skeleton {}/{}",
                self.joints,
                self.feet,
                skel.num_joints(),
                skel.num_feet()
            )));
        }
        Ok(())
    }

    /// Digest of the raw feature bits.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.joints as u64).to_le_bytes());
        h.update((self.feet as u64).to_le_bytes());
        h.update((self.frames() as u64).to_le_bytes());
        for v in self.features.data() {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_motion_layout() {
        let m = Motion::rest(2, 1, 4);
        assert_eq!(m.width(), 16);
        assert_eq!(m.rot6d(3, 1), IDENTITY_6D);
        assert_eq!(m.root_pos_channel(), 12);
        assert_eq!(m.contact_channel(0), 15);
    }

    #[test]
    fn rejects_wrong_width() {
        assert!(Motion::from_features(Tensor::zeros(&[10, 4]), 2, 1).is_err());
    }

    #[test]
    fn binarize_thresholds_at_half() {
        let mut m = Motion::rest(1, 1, 3);
        m.set_contact(0, 0, 0.49);
        m.set_contact(1, 0, 0.5);
        m.set_contact(2, 0, 0.9);
        m.binarize_contacts();
        assert_eq!(m.features().row(m.contact_channel(0)), &[0.0, 1.0, 1.0]);
    }
}
