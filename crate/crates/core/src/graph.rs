//! Skeleton-aware channel topology.
//!
//! Vertices are the joints (in skeleton order), one virtual vertex for the
//! root displacement, then one virtual vertex per contact label. Each vertex
//! owns a contiguous block of feature channels; convolutions may only mix
//! channels of vertices within a fixed hop distance.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::motion::{Skeleton, ROT_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexKind {
    Joint(usize),
    Displacement,
    Contact(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionGraph {
    pub vertices: Vec<VertexKind>,
    /// Sorted neighbour lists; symmetric.
    pub adjacency: Vec<Vec<usize>>,
    /// Base channel range of each vertex; the ranges partition `[0, F0)`.
    pub channels: Vec<Range<usize>>,
}

impl MotionGraph {
    pub fn build(skel: &Skeleton) -> Self {
        let j = skel.num_joints();
        let disp = j;
        let n = j + 1 + skel.num_feet();
        let mut vertices: Vec<VertexKind> = (0..j).map(VertexKind::Joint).collect();
        vertices.push(VertexKind::Displacement);
        vertices.extend((0..skel.num_feet()).map(VertexKind::Contact));

        let mut adjacency = vec![Vec::new(); n];
        let mut link = |a: usize, b: usize| {
            if a != b && !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        };
        for (i, joint) in skel.joints.iter().enumerate() {
            if let Some(p) = joint.parent {
                link(i, p);
            }
        }
        for c in skel.children(0).collect::<Vec<_>>() {
            link(disp, c);
        }
        for (f, &foot) in skel.foot_joints.iter().enumerate() {
            link(disp + 1 + f, foot);
            link(disp + 1 + f, disp);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }

        let mut channels = Vec::with_capacity(n);
        let mut start = 0;
        for v in &vertices {
            let w = match v {
                VertexKind::Joint(_) => ROT_FEATURES,
                VertexKind::Displacement => 3,
                VertexKind::Contact(_) => 1,
            };
            channels.push(start..start + w);
            start += w;
        }
        Self {
            vertices,
            adjacency,
            channels,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Base feature width `F0`.
    pub fn width(&self) -> usize {
        self.channels.last().map_or(0, |r| r.end)
    }

    /// Hop distances between all vertex pairs by breadth-first search;
    /// `usize::MAX` marks unreachable pairs.
    pub fn distances(&self) -> Vec<Vec<usize>> {
        let n = self.num_vertices();
        (0..n)
            .map(|s| {
                let mut d = vec![usize::MAX; n];
                d[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(u) = q.pop_front() {
                    for &v in &self.adjacency[u] {
                        if d[v] == usize::MAX {
                            d[v] = d[u] + 1;
                            q.push_back(v);
                        }
                    }
                }
                d
            })
            .collect()
    }

    /// Channel range of vertex `v` at a layer whose width is `mult · F0`.
    pub fn scaled_range(&self, v: usize, mult: usize) -> Range<usize> {
        let r = &self.channels[v];
        r.start * mult..r.end * mult
    }

    /// Row-major `[C_out × C_in]` mask: true iff the channels' vertices are
    /// within `d` hops.
    pub fn support_mask(&self, d: usize, in_mult: usize, out_mult: usize) -> Vec<bool> {
        let dist = self.distances();
        let (c_in, c_out) = (self.width() * in_mult, self.width() * out_mult);
        let mut mask = vec![false; c_out * c_in];
        for (u, du) in dist.iter().enumerate() {
            for (v, &duv) in du.iter().enumerate() {
                if duv > d {
                    continue;
                }
                for o in self.scaled_range(u, out_mult) {
                    for i in self.scaled_range(v, in_mult) {
                        mask[o * c_in + i] = true;
                    }
                }
            }
        }
        mask
    }
}
