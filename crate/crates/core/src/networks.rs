//! Per-level generator and patch discriminator.
//!
//! Both are stacks of four skeleton-masked temporal convolutions with
//! leaky-ReLU between them. The generator maps `F0 → F0 → 2F0 → 2F0 → F0`
//! channels and is applied residually on top of the upsampled coarser
//! level; the discriminator ends in a single all-joint channel whose
//! temporal mean is the score.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::MotionGraph;
use crate::tensor::{Support, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub kernel: usize,
    pub neighbor_distance: usize,
    pub slope: f64,
    /// Multiplier on the init std of the generator's last layer.
    pub generator_output_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            kernel: 5,
            neighbor_distance: 2,
            slope: 0.2,
            generator_output_gain: 1.0,
        }
    }
}

/// Shapes and masks of one convolution stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    pub channels: Vec<usize>,
    /// Row-major `[C_out × C_in]` support per layer.
    pub masks: Vec<Vec<bool>>,
    pub kernel: usize,
    pub slope: f64,
    pub output_gain: f64,
}

/// Tape-ready kernel masks; rebuilt per thread since they hold `Rc`s.
pub type TapeMasks = Vec<(Rc<Tensor>, Rc<Support>)>;

impl StackSpec {
    pub fn generator(graph: &MotionGraph, net: &NetConfig) -> Self {
        let f0 = graph.width();
        let d = net.neighbor_distance;
        Self {
            channels: vec![f0, f0, 2 * f0, 2 * f0, f0],
            masks: vec![
                graph.support_mask(d, 1, 1),
                graph.support_mask(d, 1, 2),
                graph.support_mask(d, 2, 2),
                graph.support_mask(d, 2, 1),
            ],
            kernel: net.kernel,
            slope: net.slope,
            output_gain: net.generator_output_gain,
        }
    }

    pub fn discriminator(graph: &MotionGraph, net: &NetConfig) -> Self {
        let f0 = graph.width();
        let d = net.neighbor_distance;
        Self {
            channels: vec![f0, f0, 2 * f0, 2 * f0, 1],
            masks: vec![
                graph.support_mask(d, 1, 1),
                graph.support_mask(d, 1, 2),
                graph.support_mask(d, 2, 2),
                vec![true; 2 * f0],
            ],
            kernel: net.kernel,
            slope: net.slope,
            output_gain: 1.0,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.masks.len()
    }

    pub fn kernel_shape(&self, l: usize) -> [usize; 3] {
        [self.channels[l + 1], self.channels[l], self.kernel]
    }

    pub fn tape_masks(&self) -> TapeMasks {
        (0..self.num_layers())
            .map(|l| {
                let [co, ci, k] = self.kernel_shape(l);
                let m = &self.masks[l];
                let data = m
                    .iter()
                    .flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, k))
                    .collect();
                (
                    Rc::new(Tensor::new(vec![co, ci, k], data).expect("mask shape")),
                    Rc::new(Support::from_mask(co, ci, m)),
                )
            })
            .collect()
    }

    /// Kernels drawn from N(0, 1/fan_in) with fan_in the supported inputs
    /// of each output channel times the kernel size; masked entries and
    /// biases are zero.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> ConvStack {
        let mut params = Vec::with_capacity(2 * self.num_layers());
        for l in 0..self.num_layers() {
            let [co, ci, k] = self.kernel_shape(l);
            let gain = if l + 1 == self.num_layers() { self.output_gain } else { 1.0 };
            let mut w = Tensor::zeros(&[co, ci, k]);
            for o in 0..co {
                let row = &self.masks[l][o * ci..(o + 1) * ci];
                let fan_in = row.iter().filter(|&&b| b).count() * k;
                let std = gain / (fan_in.max(1) as f64).sqrt();
                for (i, &on) in row.iter().enumerate() {
                    for kk in 0..k {
                        let v: f64 = rng.sample(rand_distr::StandardNormal);
                        if on {
                            w.data_mut()[(o * ci + i) * k + kk] = std * v;
                        }
                    }
                }
            }
            params.push(w);
            params.push(Tensor::zeros(&[co, 1]));
        }
        ConvStack { params }
    }

    /// Records the stack; LReLU after every layer but the last.
    pub fn forward(&self, tape: &mut Tape, masks: &TapeMasks, x: Var, params: &[Var]) -> Var {
        let n = self.num_layers();
        let mut h = x;
        for l in 0..n {
            h = tape.temporal_conv(h, params[2 * l], params[2 * l + 1], Some(masks[l].clone()));
            if l + 1 < n {
                h = tape.leaky_relu(h, self.slope);
            }
        }
        h
    }

    /// Frames seen by one output frame of the stack.
    pub fn receptive_field(&self) -> usize {
        stack_receptive_field(self.num_layers(), self.kernel)
    }
}

/// Parameters of one stack as `[kernel_0, bias_0, kernel_1, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub params: Vec<Tensor>,
}

impl ConvStack {
    pub fn kernel(&self, l: usize) -> &Tensor {
        &self.params[2 * l]
    }

    pub fn bias(&self, l: usize) -> &Tensor {
        &self.params[2 * l + 1]
    }

    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}

/// Constrained-channel overwrite for one level: `x ↦ x·free + fixed`.
#[derive(Debug, Clone)]
pub struct Overwrite {
    pub free: Rc<Tensor>,
    pub fixed: Tensor,
}

impl Overwrite {
    /// `channels` are the constrained rows; `values` is `[F0 × T]` with the
    /// constraint tracks in those rows (other rows ignored).
    pub fn new(channels: &[usize], values: &Tensor) -> Self {
        let (rows, t) = (values.rows(), values.cols());
        let mut free = Tensor::full(&[rows, t], 1.0);
        let mut fixed = Tensor::zeros(&[rows, t]);
        for &c in channels {
            free.row_mut(c).fill(0.0);
            fixed.row_mut(c).copy_from_slice(values.row(c));
        }
        Self {
            free: Rc::new(free),
            fixed,
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let kept = tape.mul_const(x, self.free.clone());
        let c = tape.leaf(self.fixed.clone());
        tape.add(kept, c)
    }

    pub fn apply_plain(&self, x: &Tensor) -> Tensor {
        x.zip_map(&self.free, |a, f| a * f).zip_map(&self.fixed, |a, c| a + c)
    }
}

/// One generator level: `g(z)` at the coarsest level, otherwise
/// `g(↑prev + z) + ↑prev`. With an overwrite, constrained channels are
/// replaced on both the input and the output.
pub fn generator_level(
    tape: &mut Tape,
    spec: &StackSpec,
    masks: &TapeMasks,
    params: &[Var],
    prev_up: Option<Var>,
    noise: Var,
    overwrite: Option<&Overwrite>,
) -> Var {
    let mut input = match prev_up {
        Some(p) => tape.add(p, noise),
        None => noise,
    };
    if let Some(ow) = overwrite {
        input = ow.apply(tape, input);
    }
    let mut out = spec.forward(tape, masks, input, params);
    if let Some(p) = prev_up {
        out = tape.add(out, p);
    }
    if let Some(ow) = overwrite {
        out = ow.apply(tape, out);
    }
    out
}

/// Patch discriminator score: temporal mean of the single output channel.
pub fn discriminator_level(tape: &mut Tape, spec: &StackSpec, masks: &TapeMasks, params: &[Var], x: Var) -> Var {
    let y = spec.forward(tape, masks, x, params);
    tape.mean(y)
}

/// `σ · z` broadcast over `width` channels.
pub fn broadcast_noise(z: &[f64], sigma: f64, width: usize) -> Tensor {
    let t = z.len();
    let mut data = Vec::with_capacity(width * t);
    for _ in 0..width {
        data.extend(z.iter().map(|v| sigma * v));
    }
    Tensor::matrix(width, t, data).expect("noise shape")
}

pub fn stack_receptive_field(layers: usize, kernel: usize) -> usize {
    1 + layers * (kernel - 1)
}

/// Finest-rate frame spacing of each level's samples, `F^{S−i}`.
pub fn level_spacings(factor: f64, levels: usize) -> Vec<f64> {
    (1..=levels).map(|i| factor.powi((levels - i) as i32)).collect()
}

/// Bound on how far (in finest frames) a change at one finest frame can
/// travel through the multi-level generator: each level's convolutions
/// reach `half` of its own samples, and linear resampling between levels
/// reaches one coarse sample.
pub fn multilevel_half_width(factor: f64, levels: usize, stack_field: usize) -> f64 {
    let half = ((stack_field - 1) / 2) as f64;
    let s = level_spacings(factor, levels);
    let mut h = (half + 1.0) * s[0];
    for i in 1..levels {
        h += s[i - 1] + half * s[i];
    }
    h
}

/// Frames withheld from display while streaming: `ceil(R / 2)` with
/// `R = 2H + 1` the full multi-level receptive field.
pub fn halved_receptive_field(factor: f64, levels: usize, stack_field: usize) -> usize {
    let h = multilevel_half_width(factor, levels, stack_field).ceil() as usize;
    h + 1
}
