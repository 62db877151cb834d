//! Trained level stack and its on-disk container.
//!
//! File layout: the 5 magic bytes `GNMC1`, a little-endian `u32` header
//! length, a JSON header, then every parameter block as raw little-endian
//! `f64` values in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::MotionGraph;
use crate::motion::Skeleton;
use crate::networks::{generator_level, halved_receptive_field, ConvStack, Overwrite, StackSpec, TapeMasks};
use crate::tensor::{Tape, Tensor};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 5] = b"GNMC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub generator: ConvStack,
    pub discriminator: ConvStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub skeleton: Skeleton,
    pub graph: MotionGraph,
    pub config: TrainConfig,
    /// Pyramid lengths per training sequence.
    pub lengths: Vec<Vec<usize>>,
    /// Noise amplitude per level.
    pub sigma: Vec<f64>,
    pub levels: Vec<LevelParams>,
    /// Coarsest-level reconstruction noise per training sequence.
    pub z_star: Vec<Vec<f64>>,
    pub fingerprints: Vec<String>,
    /// Constrained feature channels of a conditional model.
    pub constraint_channels: Option<Vec<usize>>,
    /// Mean absolute error of the full-chain reconstruction of each
    /// training sequence.
    pub reconstruction_error: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    skeleton: Skeleton,
    graph: MotionGraph,
    lengths: Vec<Vec<usize>>,
    sigma: Vec<f64>,
    fingerprints: Vec<String>,
    constraint_channels: Option<Vec<usize>>,
    reconstruction_error: Vec<f64>,
    blocks: Vec<Block>,
}

impl Model {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn generator_spec(&self) -> StackSpec {
        StackSpec::generator(&self.graph, &self.config.net)
    }

    pub fn discriminator_spec(&self) -> StackSpec {
        StackSpec::discriminator(&self.graph, &self.config.net)
    }

    pub fn width(&self) -> usize {
        self.graph.width()
    }

    pub fn factor(&self) -> f64 {
        self.config.factor
    }

    /// Frames withheld while streaming.
    pub fn halved_receptive_field(&self) -> usize {
        halved_receptive_field(self.factor(), self.num_levels(), self.generator_spec().receptive_field())
    }

    pub fn is_conditional(&self) -> bool {
        self.constraint_channels.is_some()
    }

    /// Evaluates generator level `i` (0-based) without recording gradients.
    pub fn run_level(
        &self,
        i: usize,
        masks: &TapeMasks,
        prev_up: Option<&Tensor>,
        noise: Tensor,
        overwrite: Option<&Overwrite>,
    ) -> Tensor {
        let spec = self.generator_spec();
        let mut tape = Tape::new();
        let params = self.levels[i].generator.leaves(&mut tape);
        let prev = prev_up.map(|p| tape.leaf(p.clone()));
        let z = tape.leaf(noise);
        let out = generator_level(&mut tape, &spec, masks, &params, prev, z, overwrite);
        let value = tape.value(out).clone();
        value
    }

    fn blocks(&self) -> (Vec<Block>, Vec<&Tensor>) {
        let mut desc = Vec::new();
        let mut data = Vec::new();
        for (i, l) in self.levels.iter().enumerate() {
            for (tag, stack) in [("g", &l.generator), ("d", &l.discriminator)] {
                for (p, t) in stack.params.iter().enumerate() {
                    desc.push(Block {
                        name: format!("level{}.{tag}.{p}", i + 1),
                        shape: t.shape().to_vec(),
                    });
                    data.push(t);
                }
            }
        }
        (desc, data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let (mut blocks, tensors) = self.blocks();
        for (k, z) in self.z_star.iter().enumerate() {
            blocks.push(Block {
                name: format!("z_star.{k}"),
                shape: vec![z.len()],
            });
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            skeleton: self.skeleton.clone(),
            graph: self.graph.clone(),
            lengths: self.lengths.clone(),
            sigma: self.sigma.clone(),
            fingerprints: self.fingerprints.clone(),
            constraint_channels: self.constraint_channels.clone(),
            reconstruction_error: self.reconstruction_error.clone(),
            blocks,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 9 + 8 * tensors.iter().map(|t| t.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for z in &self.z_star {
            for v in z {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 9 || &bytes[..5] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(9..9 + hlen)
            .ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != FORMAT_VERSION {
            return Err(CheckpointError::Version(header.version));
        }
        let mut rest = &bytes[9 + hlen..];
        let mut read_block = |shape: &[usize]| -> Result<Vec<f64>, CheckpointError> {
            let n: usize = shape.iter().product();
            if rest.len() < 8 * n {
                return Err(CheckpointError::Corrupt("truncated parameter data".into()));
            }
            let (head, tail) = rest.split_at(8 * n);
            rest = tail;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };

        let gspec = StackSpec::generator(&header.graph, &header.config.net);
        let dspec = StackSpec::discriminator(&header.graph, &header.config.net);
        let per_stack = [2 * gspec.num_layers(), 2 * dspec.num_layers()];
        let n_levels = header.sigma.len();
        let mut blocks = header.blocks.iter();
        let mut levels = Vec::with_capacity(n_levels);
        for _ in 0..n_levels {
            let mut stacks = Vec::with_capacity(2);
            for count in per_stack {
                let mut params = Vec::with_capacity(count);
                for _ in 0..count {
                    let b = blocks
                        .next()
                        .ok_or_else(|| CheckpointError::Corrupt("missing parameter block".into()))?;
                    let data = read_block(&b.shape)?;
                    params.push(
                        Tensor::new(b.shape.clone(), data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?,
                    );
                }
                stacks.push(ConvStack { params });
            }
            let discriminator = stacks.pop().expect("two stacks");
            let generator = stacks.pop().expect("two stacks");
            levels.push(LevelParams {
                generator,
                discriminator,
            });
        }
        let mut z_star = Vec::new();
        for b in blocks {
            if !b.name.starts_with("z_star.") {
                return Err(CheckpointError::Corrupt(format!("unexpected block {}", b.name)));
            }
            z_star.push(read_block(&b.shape)?);
        }
        if !rest.is_empty() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", rest.len())));
        }
        let model = Self {
            skeleton: header.skeleton,
            graph: header.graph,
            config: header.config,
            lengths: header.lengths,
            sigma: header.sigma,
            levels,
            z_star,
            fingerprints: header.fingerprints,
            constraint_channels: header.constraint_channels,
            reconstruction_error: header.reconstruction_error,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), CheckpointError> {
        let specs = [self.generator_spec(), self.discriminator_spec()];
        for (i, l) in self.levels.iter().enumerate() {
            for (spec, stack) in specs.iter().zip([&l.generator, &l.discriminator]) {
                for layer in 0..spec.num_layers() {
                    if stack.kernel(layer).shape() != spec.kernel_shape(layer) {
                        return Err(CheckpointError::Corrupt(format!(
                            "level {} layer {layer}: kernel shape {:?}",
                            i + 1,
                            stack.kernel(layer).shape()
                        )));
                    }
                }
            }
        }
        if self.z_star.len() != self.lengths.len() {
            return Err(CheckpointError::Corrupt("reconstruction noise count mismatch".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
