//! Foot-contact cleanup: pins each foot at its mean position over every
//! contact run and solves the leg chain with damped least squares.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::motion::{axis_rotation, forward_kinematics, matrix_to_rot6d, Motion, MotionError, Skeleton};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub max_iterations: usize,
    pub damping: f64,
    /// Frames blended on each side of a contact run.
    pub blend_frames: usize,
    /// Ancestors of the foot (root excluded) that the solver may rotate.
    pub chain_length: usize,
    /// Residual (in skeleton units) at which the solver stops early.
    pub tolerance: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            damping: 0.01,
            blend_frames: 5,
            chain_length: 3,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IkReport {
    pub runs: usize,
    pub frames_solved: usize,
    /// Feet whose chain was too short to solve.
    pub skipped_feet: Vec<String>,
    /// Largest remaining distance between a foot and its target.
    pub max_residual: f64,
}

/// Maximal runs `[start, end)` of frames with label ≥ 0.5.
pub fn contact_runs(labels: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, &v) in labels.iter().enumerate() {
        match (v >= 0.5, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, labels.len()));
    }
    runs
}

/// World positions of one frame from local rotations and the root position.
fn frame_positions(skel: &Skeleton, local: &[Matrix3<f64>], root: Vector3<f64>) -> Vec<Vector3<f64>> {
    let mut g: Vec<Matrix3<f64>> = Vec::with_capacity(local.len());
    let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(local.len());
    for (j, joint) in skel.joints.iter().enumerate() {
        match joint.parent {
            None => {
                g.push(local[j]);
                pos.push(root);
            }
            Some(p) => {
                pos.push(pos[p] + g[p] * Vector3::from(joint.offset));
                g.push(g[p] * local[j]);
            }
        }
    }
    pos
}

fn delta(params: &[f64]) -> Matrix3<f64> {
    axis_rotation(0, params[0]) * axis_rotation(1, params[1]) * axis_rotation(2, params[2])
}

/// Rotates `chain` joints of one frame so `foot` reaches `target`. Returns
/// the final residual.
fn solve_frame(
    skel: &Skeleton,
    local: &mut [Matrix3<f64>],
    root: Vector3<f64>,
    chain: &[usize],
    foot: usize,
    target: Vector3<f64>,
    cfg: &IkConfig,
) -> f64 {
    let n = 3 * chain.len();
    let foot_at = |local: &[Matrix3<f64>]| frame_positions(skel, local, root)[foot];
    let mut err = target - foot_at(local);
    let h = 1e-6;
    for _ in 0..cfg.max_iterations {
        if err.norm() <= cfg.tolerance {
            break;
        }
        let base = foot_at(local);
        let mut jac = DMatrix::zeros(3, n);
        for (c, &j) in chain.iter().enumerate() {
            let orig = local[j];
            for a in 0..3 {
                let mut p = [0.0; 3];
                p[a] = h;
                local[j] = orig * delta(&p);
                let d = (foot_at(local) - base) / h;
                jac.fixed_view_mut::<3, 1>(0, 3 * c + a).copy_from(&d);
            }
            local[j] = orig;
        }
        let e = DVector::from_column_slice(err.as_slice());
        let jjt = &jac * jac.transpose() + DMatrix::identity(3, 3) * (cfg.damping * cfg.damping);
        let Some(inv) = jjt.try_inverse() else { break };
        let step = jac.transpose() * inv * e;
        for (c, &j) in chain.iter().enumerate() {
            local[j] *= delta(&step.as_slice()[3 * c..3 * c + 3]);
        }
        err = target - foot_at(local);
    }
    err.norm()
}

/// Pins feet during contact runs. Only chain joints of frames inside a run
/// or its blend windows change; contact channels are left as they are.
pub fn foot_ik_cleanup(skel: &Skeleton, motion: &Motion, cfg: &IkConfig) -> Result<(Motion, IkReport), MotionError> {
    motion.check_skeleton(skel)?;
    let frames = motion.frames();
    let mut out = motion.clone();
    let mut report = IkReport::default();
    if frames == 0 {
        return Ok((out, report));
    }
    let positions = forward_kinematics(skel, motion)?;
    let mut local = motion.rotation_matrices()?;
    let mut touched = vec![false; frames];

    for (f, &foot) in skel.foot_joints.iter().enumerate() {
        let labels: Vec<f64> = (0..frames).map(|t| motion.contact(t, f)).collect();
        let runs = contact_runs(&labels);
        if runs.is_empty() {
            continue;
        }
        let chain: Vec<usize> = skel
            .ancestors(foot)
            .into_iter()
            .filter(|&j| skel.joints[j].parent.is_some())
            .take(cfg.chain_length)
            .collect();
        if chain.len() < 2 {
            log::warn!(
                "foot joint {} has fewer than two non-root ancestors; contact cleanup skipped",
                skel.joints[foot].name
            );
            report.skipped_feet.push(skel.joints[foot].name.clone());
            continue;
        }
        report.runs += runs.len();

        // Per frame: (blend weight, target). Overlapping windows keep the
        // strongest pull.
        let mut targets: Vec<Option<(f64, Vector3<f64>)>> = vec![None; frames];
        let mut offer = |t: usize, w: f64, anchor: Vector3<f64>| {
            let target = positions[t][foot] + (anchor - positions[t][foot]) * w;
            if targets[t].is_none_or(|(old, _)| w > old) {
                targets[t] = Some((w, target));
            }
        };
        for &(s, e) in &runs {
            let anchor = (s..e).map(|t| positions[t][foot]).sum::<Vector3<f64>>() / (e - s) as f64;
            for t in s..e {
                offer(t, 1.0, anchor);
            }
            let denom = (cfg.blend_frames + 1) as f64;
            for d in 1..=cfg.blend_frames {
                let w = 1.0 - d as f64 / denom;
                if let Some(t) = s.checked_sub(d) {
                    offer(t, w, anchor);
                }
                if e - 1 + d < frames {
                    offer(e - 1 + d, w, anchor);
                }
            }
        }
        for (t, tgt) in targets.into_iter().enumerate() {
            let Some((_, target)) = tgt else { continue };
            let residual = solve_frame(skel, &mut local[t], motion.root_pos(t), &chain, foot, target, cfg);
            report.max_residual = report.max_residual.max(residual);
            report.frames_solved += 1;
            touched[t] = true;
        }
    }

    for (t, rots) in local.iter().enumerate() {
        if touched[t] {
            for (j, r) in rots.iter().enumerate() {
                out.set_rot6d(t, j, &matrix_to_rot6d(r));
            }
        }
    }
    Ok((out, report))
}
