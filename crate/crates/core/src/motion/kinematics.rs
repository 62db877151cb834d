use nalgebra::{Matrix3, Vector3};

use super::{Motion, MotionError, Skeleton};
use crate::tensor::Tensor;

/// Global rotation of every joint at every frame, `[t][j]`.
pub fn global_rotations(skel: &Skeleton, motion: &Motion) -> Result<Vec<Vec<Matrix3<f64>>>, MotionError> {
    check_joints(skel, motion)?;
    (0..motion.frames())
        .map(|t| {
            let mut g: Vec<Matrix3<f64>> = Vec::with_capacity(skel.num_joints());
            for (j, joint) in skel.joints.iter().enumerate() {
                let local = motion.rotation(t, j)?;
                g.push(match joint.parent {
                    None => local,
                    Some(p) => g[p] * local,
                });
            }
            Ok(g)
        })
        .collect()
}

/// Global joint positions `[t][j]`. The root sits at the displacement
/// channels; every child is its parent's position plus the parent's global
/// rotation applied to the child offset.
pub fn forward_kinematics(skel: &Skeleton, motion: &Motion) -> Result<Vec<Vec<Vector3<f64>>>, MotionError> {
    let rots = global_rotations(skel, motion)?;
    Ok(rots
        .iter()
        .enumerate()
        .map(|(t, g)| {
            let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(skel.num_joints());
            for joint in &skel.joints {
                pos.push(match joint.parent {
                    None => motion.root_pos(t),
                    Some(p) => pos[p] + g[p] * Vector3::from(joint.offset),
                });
            }
            pos
        })
        .collect())
}

/// Per-frame speed of each foot joint, `[foot × T]`: forward difference at
/// frame 0, backward difference elsewhere.
pub fn foot_speeds(skel: &Skeleton, motion: &Motion) -> Result<Tensor, MotionError> {
    let t_len = motion.frames();
    if t_len < 2 {
        return Err(MotionError::TooShort(format!("{t_len} frames; contact labels need 2")));
    }
    let pos = forward_kinematics(skel, motion)?;
    let mut out = Tensor::zeros(&[skel.num_feet(), t_len]);
    for (f, &j) in skel.foot_joints.iter().enumerate() {
        for t in 0..t_len {
            let (a, b) = if t == 0 { (1, 0) } else { (t, t - 1) };
            out.set(f, t, (pos[a][j] - pos[b][j]).norm());
        }
    }
    Ok(out)
}

/// Binary contact labels `[foot × T]`: 1 where the foot speed is below
/// `eps_vel` (length units per frame).
pub fn contact_labels(skel: &Skeleton, motion: &Motion, eps_vel: f64) -> Result<Tensor, MotionError> {
    if !(eps_vel > 0.0) {
        return Err(MotionError::Invalid(format!("contact threshold {eps_vel} must be positive")));
    }
    Ok(foot_speeds(skel, motion)?.map(|s| if s < eps_vel { 1.0 } else { 0.0 }))
}

fn check_joints(skel: &Skeleton, motion: &Motion) -> Result<(), MotionError> {
    if skel.num_joints() != motion.num_joints() {
        return Err(MotionError::Mismatch(format!(
            "skeleton has {} joints, motion {}",
            skel.num_joints(),
            motion.num_joints()
        )));
    }
    Ok(())
}
