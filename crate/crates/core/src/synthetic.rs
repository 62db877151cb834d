//! Procedural skeletons and clips for tests, benchmarks and demos.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::motion::{
    axis_rotation, contact_labels, euler_to_matrix, matrix_to_rot6d, EulerOrder, Joint, Motion, Skeleton,
};

fn joint(name: &str, parent: Option<usize>, offset: [f64; 3], order: EulerOrder) -> Joint {
    Joint {
        name: name.into(),
        parent,
        offset,
        rotation_order: order,
    }
}

/// Two joints (hips, foot), one contact. Frame time 1/30 s.
pub fn sine_walk_skeleton() -> Skeleton {
    Skeleton::new(
        vec![
            joint("hips", None, [0.0; 3], EulerOrder::Zxy),
            joint("foot", Some(0), [0.0, -1.0, 0.0], EulerOrder::Zxy),
        ],
        vec![],
        vec![1],
        1.0 / 30.0,
    )
    .expect("valid toy skeleton")
}

/// Periodic one-legged toy gait: during stance the foot stays planted while
/// the hips swing over it; during swing the foot lifts and travels forward.
/// Contacts come from foot speed.
pub fn sine_walk(frames: usize) -> (Skeleton, Motion) {
    let skel = sine_walk_skeleton();
    let half = 20.0;
    let amp: f64 = 0.4;
    let step = 2.0 * amp.sin();
    let mut m = Motion::rest(2, 1, frames);
    for t in 0..frames {
        let cycle = (t as f64 / (2.0 * half)).floor();
        let u = (t as f64 - 2.0 * half * cycle) / half;
        let (swing, foot_x, foot_y) = if u < 1.0 {
            (amp * (PI * u).cos(), 2.0 * step * cycle, 0.0)
        } else {
            let v = u - 1.0;
            let ease = 0.5 - 0.5 * (PI * v).cos();
            (-amp * (PI * v).cos(), 2.0 * step * (cycle + ease), 0.1 * (PI * v).sin())
        };
        let knee = 0.3 * (PI * u).sin();
        m.set_rot6d(t, 0, &matrix_to_rot6d(&axis_rotation(2, swing)));
        m.set_rot6d(t, 1, &matrix_to_rot6d(&axis_rotation(0, knee)));
        m.set_root_pos(t, Vector3::new(foot_x - swing.sin(), foot_y + swing.cos(), 0.0));
    }
    label_contacts(&skel, &mut m);
    (skel, m)
}

fn label_contacts(skel: &Skeleton, m: &mut Motion) {
    if m.frames() < 2 || skel.num_feet() == 0 {
        return;
    }
    let labels = contact_labels(skel, m, skel.default_contact_threshold()).expect("toy contacts");
    for f in 0..skel.num_feet() {
        for t in 0..m.frames() {
            m.set_contact(t, f, labels.at(f, t));
        }
    }
}

/// Builder that adds chains of bones hanging off existing joints.
struct Rig {
    joints: Vec<Joint>,
    orders: Vec<EulerOrder>,
}

impl Rig {
    fn new(orders: Vec<EulerOrder>) -> Self {
        Self {
            joints: vec![joint("root", None, [0.0; 3], orders[0])],
            orders,
        }
    }

    fn chain(&mut self, prefix: &str, parent: usize, offsets: &[[f64; 3]]) -> usize {
        let mut p = parent;
        for (k, o) in offsets.iter().enumerate() {
            let order = self.orders[self.joints.len() % self.orders.len()];
            self.joints.push(joint(&format!("{prefix}{k}"), Some(p), *o, order));
            p = self.joints.len() - 1;
        }
        p
    }

    fn finish(self, frame_time: f64) -> Skeleton {
        let mut s = Skeleton::new(self.joints, vec![], vec![], frame_time).expect("valid rig");
        s.foot_joints = s.guess_foot_joints();
        s
    }
}

/// Biped with spine, arms and legs (22 joints).
pub fn humanoid_skeleton() -> Skeleton {
    let mut r = Rig::new(EulerOrder::ALL.to_vec());
    let spine = r.chain("spine", 0, &[[0.0, 0.1, 0.0], [0.0, 0.15, 0.0], [0.0, 0.15, 0.0]]);
    r.chain("head", spine, &[[0.0, 0.1, 0.0], [0.0, 0.1, 0.0]]);
    for (side, x) in [("l_arm", 1.0), ("r_arm", -1.0)] {
        r.chain(side, spine, &[[0.08 * x, 0.05, 0.0], [0.15 * x, 0.0, 0.0], [0.25 * x, 0.0, 0.0], [0.22 * x, 0.0, 0.0]]);
    }
    for (side, x) in [("l_leg", 1.0), ("r_leg", -1.0)] {
        r.chain(side, 0, &[[0.1 * x, -0.05, 0.0], [0.0, -0.4, 0.0], [0.0, -0.4, 0.0], [0.0, -0.05, 0.12]]);
    }
    r.finish(1.0 / 30.0)
}

/// Four-legged rig with tail and neck.
pub fn quadruped_skeleton() -> Skeleton {
    let mut r = Rig::new(vec![EulerOrder::Zyx, EulerOrder::Xyz, EulerOrder::Yzx]);
    let back = r.chain("spine", 0, &[[0.0, 0.0, 0.3], [0.0, 0.0, 0.3]]);
    r.chain("neck", back, &[[0.0, 0.15, 0.15], [0.0, 0.05, 0.15]]);
    r.chain("tail", 0, &[[0.0, 0.0, -0.2], [0.0, -0.05, -0.2], [0.0, -0.05, -0.2]]);
    for (name, base, x) in [("fl", back, 1.0), ("fr", back, -1.0), ("hl", 0, 1.0), ("hr", 0, -1.0)] {
        r.chain(name, base, &[[0.12 * x, -0.1, 0.0], [0.0, -0.25, 0.0], [0.0, -0.25, 0.02]]);
    }
    r.finish(1.0 / 24.0)
}

/// Six-legged rig with a three-segment body.
pub fn hexapod_skeleton() -> Skeleton {
    let mut r = Rig::new(vec![EulerOrder::Yxz, EulerOrder::Xzy, EulerOrder::Zxy, EulerOrder::Zyx]);
    let mid = r.chain("thorax", 0, &[[0.0, 0.0, 0.15]]);
    let head = r.chain("head", mid, &[[0.0, 0.0, 0.15]]);
    for (i, base) in [0usize, mid, head].into_iter().enumerate() {
        for (side, x) in [("l", 1.0), ("r", -1.0)] {
            r.chain(
                &format!("leg{i}{side}"),
                base,
                &[[0.05 * x, 0.0, 0.0], [0.12 * x, 0.05, 0.0], [0.1 * x, -0.2, 0.0]],
            );
        }
    }
    r.finish(1.0 / 60.0)
}

/// Random smooth motion: each Euler angle is a sum of two sinusoids with
/// random phase, amplitudes up to `amplitude_deg`.
pub fn random_motion(skel: &Skeleton, frames: usize, amplitude_deg: f64, seed: u64) -> Motion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Motion::rest(skel.num_joints(), skel.num_feet(), frames);
    let waves = |rng: &mut ChaCha8Rng| -> [(f64, f64, f64); 2] {
        std::array::from_fn(|_| {
            (
                rng.random_range(-amplitude_deg..amplitude_deg),
                rng.random_range(0.02..0.2),
                rng.random_range(0.0..2.0 * PI),
            )
        })
    };
    for (j, jt) in skel.joints.iter().enumerate() {
        let axes: [[(f64, f64, f64); 2]; 3] = std::array::from_fn(|_| waves(&mut rng));
        for t in 0..frames {
            let ang: [f64; 3] = std::array::from_fn(|a| {
                axes[a].iter().map(|(amp, w, ph)| amp * (w * t as f64 + ph).sin()).sum()
            });
            m.set_rot6d(t, j, &matrix_to_rot6d(&euler_to_matrix(jt.rotation_order, ang)));
        }
    }
    let drift: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.02..0.02));
    for t in 0..frames {
        let tf = t as f64;
        m.set_root_pos(t, Vector3::new(drift[0] * tf, 1.0 + drift[1] * (0.1 * tf).sin(), drift[2] * tf));
    }
    label_contacts(skel, &mut m);
    m
}
