use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rotation::EulerOrder;
use super::MotionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    /// Channel order used when reading/writing BVH rotations.
    pub rotation_order: EulerOrder,
}

/// Terminal BVH `End Site` attached to a joint; kept only so files
/// round-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndSite {
    pub parent: usize,
    pub offset: [f64; 3],
}

/// Kinematic tree in topological order (parents precede children, joint 0
/// is the root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    pub end_sites: Vec<EndSite>,
    /// Joints carrying contact labels, in label order.
    pub foot_joints: Vec<usize>,
    /// Seconds per frame.
    pub frame_time: f64,
}

impl Skeleton {
    pub fn new(
        joints: Vec<Joint>,
        end_sites: Vec<EndSite>,
        foot_joints: Vec<usize>,
        frame_time: f64,
    ) -> Result<Self, MotionError> {
        let skel = Self {
            joints,
            end_sites,
            foot_joints,
            frame_time,
        };
        skel.validate()?;
        Ok(skel)
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        if self.joints.is_empty() {
            return Err(MotionError::InvalidSkeleton("no joints".into()));
        }
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 || self.joints[0].parent.is_some() {
            return Err(MotionError::InvalidSkeleton(
                "exactly one root, stored first, is required".into(),
            ));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(MotionError::InvalidSkeleton(format!(
                        "joint {i} ({}) has parent {p} that does not precede it",
                        j.name
                    )));
                }
            }
        }
        for &f in &self.foot_joints {
            if f >= self.joints.len() {
                return Err(MotionError::InvalidSkeleton(format!("foot joint {f} out of range")));
            }
        }
        if !(self.frame_time > 0.0) {
            return Err(MotionError::InvalidSkeleton("frame time must be positive".into()));
        }
        Ok(())
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_feet(&self) -> usize {
        self.foot_joints.len()
    }

    /// Feature width `6J + 3 + |F|`.
    pub fn feature_width(&self) -> usize {
        6 * self.num_joints() + 3 + self.num_feet()
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.parent == Some(j))
            .map(|(i, _)| i)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Ancestors of `j`, nearest first, excluding `j` itself.
    pub fn ancestors(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.joints[j].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.joints[p].parent;
        }
        out
    }

    /// Joint positions of the rest pose (identity rotations, root at the
    /// origin).
    pub fn rest_positions(&self) -> Vec<Vector3<f64>> {
        let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let p = match j.parent {
                None => Vector3::zeros(),
                Some(p) => pos[p] + Vector3::from(j.offset),
            };
            pos.push(p);
        }
        pos
    }

    /// Vertical (y) extent of the rest pose, falling back to the largest
    /// extent along any axis for skeletons lying flat.
    pub fn height(&self) -> f64 {
        let pos = self.rest_positions();
        let extent = |axis: usize| {
            let (lo, hi) = pos.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[axis]), hi.max(p[axis]))
            });
            hi - lo
        };
        let h = extent(1);
        if h > 1e-9 {
            h
        } else {
            extent(0).max(extent(2))
        }
    }

    /// Default contact velocity threshold: 0.006 × height per frame.
    pub fn default_contact_threshold(&self) -> f64 {
        0.006 * self.height()
    }

    /// Leaf joints whose rest height is within 10% of the skeleton height
    /// of the lowest joint.
    pub fn guess_foot_joints(&self) -> Vec<usize> {
        let pos = self.rest_positions();
        let lowest = pos.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let tol = 0.1 * self.height();
        (0..self.joints.len())
            .filter(|&j| self.children(j).next().is_none() && j != 0)
            .filter(|&j| pos[j][1] - lowest <= tol)
            .collect()
    }

    /// Stable digest of the topology and offsets.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for j in &self.joints {
            h.update(j.name.as_bytes());
            h.update([0u8]);
            h.update((j.parent.map_or(u64::MAX, |p| p as u64)).to_le_bytes());
            for v in j.offset {
                h.update(v.to_le_bytes());
            }
        }
        for f in &self.foot_joints {
            h.update((*f as u64).to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn joint(name: &str, parent: Option<usize>, offset: [f64; 3]) -> Joint {
        Joint {
            name: name.into(),
            parent,
            offset,
            rotation_order: EulerOrder::Zxy,
        }
    }

    #[test]
    fn rejects_out_of_order_parents() {
        let joints = vec![joint("root", None, [0.0; 3]), joint("a", Some(2), [0.0; 3]), joint("b", Some(0), [0.0; 3])];
        assert!(Skeleton::new(joints, vec![], vec![], 1.0 / 30.0).is_err());
    }

    #[test]
    fn rejects_two_roots() {
        let joints = vec![joint("root", None, [0.0; 3]), joint("other", None, [0.0; 3])];
        assert!(Skeleton::new(joints, vec![], vec![], 1.0 / 30.0).is_err());
    }

    #[test]
    fn height_and_feet_of_a_leg() {
        let joints = vec![
            joint("hips", None, [0.0; 3]),
            joint("knee", Some(0), [0.0, -1.0, 0.0]),
            joint("ankle", Some(1), [0.0, -1.0, 0.0]),
            joint("arm", Some(0), [0.5, 0.5, 0.0]),
        ];
        let s = Skeleton::new(joints, vec![], vec![2], 1.0 / 30.0).unwrap();
        assert_eq!(s.height(), 2.5);
        assert_eq!(s.guess_foot_joints(), vec![2]);
        assert_eq!(s.feature_width(), 6 * 4 + 3 + 1);
        assert_eq!(s.ancestors(2), vec![1, 0]);
    }
}
