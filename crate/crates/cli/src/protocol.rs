//! Streaming wire protocol: one JSON document per websocket text message.
//! Websocket framing carries each message's length.

use mosyn_core::motion::{Motion, Skeleton};
use mosyn_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFrame {
    pub root_pos: [f64; 3],
    pub root_rot6d: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rot6d: Vec<[f64; 6]>,
    pub root_pos: [f64; 3],
    pub contacts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        version: Option<u32>,
    },
    Constraints {
        frames: Vec<ConstraintFrame>,
        #[serde(default)]
        seed: u64,
    },
    Bye {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello {
        version: u32,
        skeleton: Skeleton,
        frame_time: f64,
        r: usize,
    },
    Frames {
        start_index: usize,
        poses: Vec<Pose>,
    },
    Error {
        code: String,
        detail: String,
    },
    Bye {},
}

impl ServerMessage {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Self::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

/// Where each constrained feature channel comes from in a constraint frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Rot(usize),
    Pos(usize),
}

/// Maps protocol constraint frames onto a model's constrained channels.
#[derive(Debug, Clone)]
pub struct ChannelMap {
    sources: Vec<Source>,
}

impl ChannelMap {
    /// Fails unless every constrained channel is a root rotation or root
    /// position channel.
    pub fn new(skel: &Skeleton, channels: &[usize]) -> Result<Self, String> {
        let pos0 = 6 * skel.num_joints();
        let sources = channels
            .iter()
            .map(|&c| match c {
                0..6 => Ok(Source::Rot(c)),
                c if (pos0..pos0 + 3).contains(&c) => Ok(Source::Pos(c - pos0)),
                c => Err(format!("constrained channel {c} is not a root channel")),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { sources })
    }

    /// `[|C| × n]` constraint rows.
    pub fn to_rows(&self, frames: &[ConstraintFrame]) -> Tensor {
        let n = frames.len();
        let mut data = Vec::with_capacity(self.sources.len() * n);
        for s in &self.sources {
            data.extend(frames.iter().map(|f| match *s {
                Source::Rot(k) => f.root_rot6d[k],
                Source::Pos(k) => f.root_pos[k],
            }));
        }
        Tensor::matrix(self.sources.len(), n, data).expect("constraint shape")
    }
}

/// Constraint frames read from a motion's root channels.
pub fn constraint_frames(m: &Motion) -> Vec<ConstraintFrame> {
    (0..m.frames())
        .map(|t| ConstraintFrame {
            root_pos: m.root_pos(t).into(),
            root_rot6d: m.rot6d(t, 0),
        })
        .collect()
}

pub fn poses(m: &Motion) -> Vec<Pose> {
    (0..m.frames())
        .map(|t| Pose {
            rot6d: (0..m.num_joints()).map(|j| m.rot6d(t, j)).collect(),
            root_pos: m.root_pos(t).into(),
            contacts: (0..m.num_feet()).map(|f| m.contact(t, f)).collect(),
        })
        .collect()
}

/// Rebuilds a motion from received poses.
pub fn poses_to_motion(poses: &[Pose], joints: usize, feet: usize) -> Motion {
    let mut m = Motion::rest(joints, feet, poses.len());
    for (t, p) in poses.iter().enumerate() {
        for (j, r) in p.rot6d.iter().enumerate() {
            m.set_rot6d(t, j, r);
        }
        m.set_root_pos(t, p.root_pos.into());
        for (f, &c) in p.contacts.iter().enumerate() {
            m.set_contact(t, f, c);
        }
    }
    m
}
