//! Progressive adversarial training of the level stack.
//!
//! Levels are trained in blocks of two, coarse to fine; earlier blocks are
//! frozen. Every iteration draws a fresh fake through the whole stack,
//! updates each block discriminator with the gradient-penalised critic
//! loss, then updates the block generators on the adversarial,
//! reconstruction and contact terms.

pub mod losses;

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::MotionGraph;
use crate::model::{LevelParams, Model};
use crate::motion::{build_pyramid, resample_map, resample_tensor, Motion, MotionError, Pyramid, Skeleton};
use crate::networks::{broadcast_noise, generator_level, NetConfig, Overwrite, StackSpec, TapeMasks};
use crate::tensor::{AdamConfig, AdamState, SparseMap, Tape, Tensor, TensorError, Var};

use losses::{contact_loss, critic_loss, l1_mean};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_adv: f64,
    pub lambda_rec: f64,
    pub lambda_con: f64,
    pub lambda_gp: f64,
    pub iterations_per_level: usize,
    pub adam: AdamConfig,
    pub factor: f64,
    pub levels: usize,
    pub block_size: usize,
    pub critic_steps: usize,
    pub contact_loss: bool,
    pub seed: u64,
    pub net: NetConfig,
    /// Telemetry cadence in iterations (first and last are always sent).
    pub telemetry_every: usize,
    /// Unconditional samples drawn from the base model when training a
    /// conditional one.
    pub constraint_pool: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_rec: 50.0,
            lambda_con: 5.0,
            lambda_gp: 1.0,
            iterations_per_level: 15_000,
            // Tuned on the 500-iteration sine-walk gate; 1e-4 leaves the
            // coarsest level far from its reconstruction at that budget.
            adam: AdamConfig {
                learning_rate: 2e-3,
                ..AdamConfig::default()
            },
            factor: 4.0 / 3.0,
            levels: 7,
            block_size: 2,
            critic_steps: 3,
            contact_loss: true,
            seed: 0,
            net: NetConfig::default(),
            telemetry_every: 10,
            constraint_pool: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let lambdas = [self.lambda_adv, self.lambda_rec, self.lambda_con, self.lambda_gp];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(TrainError::Config("loss weights must be finite and non-negative".into()));
        }
        if self.block_size == 0 || self.critic_steps == 0 || self.telemetry_every == 0 {
            return Err(TrainError::Config(
                "block size, critic steps and telemetry cadence must be positive".into(),
            ));
        }
        if self.net.kernel.is_multiple_of(2) {
            return Err(TrainError::Config(format!("kernel size {} must be odd", self.net.kernel)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at level {level}, iteration {iteration}: {what} is not finite")]
    Diverged {
        level: usize,
        iteration: usize,
        what: &'static str,
    },
}

/// One telemetry line; levels are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub level: usize,
    pub iteration: usize,
    pub critic: f64,
    pub penalty: f64,
    pub d_real: f64,
    pub d_fake: f64,
    pub adversarial: f64,
    pub reconstruction: f64,
    pub contact: f64,
}

/// Named constrained-channel sets for conditional models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintPreset {
    /// Root orientation (6D) and root displacement.
    Root,
    All,
}

impl ConstraintPreset {
    pub fn channels(self, skel: &Skeleton) -> Vec<usize> {
        let j = skel.num_joints();
        match self {
            ConstraintPreset::Root => (0..6).chain(6 * j..6 * j + 3).collect(),
            ConstraintPreset::All => (0..skel.feature_width()).collect(),
        }
    }
}

impl std::str::FromStr for ConstraintPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "root" => Ok(ConstraintPreset::Root),
            "all" => Ok(ConstraintPreset::All),
            _ => Err(format!("unknown constraint preset `{s}` (expected root or all)")),
        }
    }
}

/// Resampling maps shared across iterations.
#[derive(Default)]
struct MapCache(BTreeMap<(usize, usize), Rc<SparseMap>>);

impl MapCache {
    fn get(&mut self, from: usize, to: usize) -> Rc<SparseMap> {
        self.0
            .entry((from, to))
            .or_insert_with(|| Rc::new(resample_map(from, to)))
            .clone()
    }
}

fn normal_track(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Per-sequence constraint overwrites for every level.
type LevelOverwrites = Vec<Overwrite>;

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    skel: &'a Skeleton,
    pyramids: Vec<Pyramid>,
    sigma: Vec<f64>,
    gspec: StackSpec,
    dspec: StackSpec,
    gmasks: TapeMasks,
    dmasks: TapeMasks,
    levels: Vec<LevelParams>,
    z_star: Vec<Vec<f64>>,
    maps: MapCache,
    channels: Option<Vec<usize>>,
    /// Reconstruction overwrites per sequence (conditional only).
    rec_overwrites: Vec<LevelOverwrites>,
    /// Constraint pool: per sample, per sequence, per level.
    pool: Vec<Vec<LevelOverwrites>>,
}

impl Trainer<'_> {
    fn width(&self) -> usize {
        self.gspec.channels[0]
    }

    fn noise(&self, rng: &mut ChaCha8Rng, level: usize, t: usize) -> Tensor {
        broadcast_noise(&normal_track(rng, t), self.sigma[level], self.width())
    }

    /// Fresh fake for sequence `k` from the frozen levels below `start`,
    /// recorded on `tape` for levels `start..=end`.
    #[allow(clippy::too_many_arguments)]
    fn fake_chain(
        &mut self,
        tape: &mut Tape,
        rng: &mut ChaCha8Rng,
        k: usize,
        start: usize,
        end: usize,
        gparams: &[Vec<Var>],
        pool_index: usize,
    ) -> Vec<Var> {
        let lengths = self.pyramids[k].lengths.clone();
        let mut prev: Option<Tensor> = None;
        for (i, &len) in lengths.iter().enumerate().take(start) {
            let noise = self.noise(rng, i, len);
            let up = prev.as_ref().map(|p| resample_tensor(p, lengths[i]));
            let ow = self.overwrite(pool_index, k, i);
            let mut t = Tape::new();
            let params = self.levels[i].generator.leaves(&mut t);
            let up_v = up.map(|u| t.leaf(u));
            let z = t.leaf(noise);
            let out = generator_level(&mut t, &self.gspec, &self.gmasks, &params, up_v, z, ow.as_ref());
            prev = Some(t.value(out).clone());
        }
        let mut prev_v = prev.map(|p| tape.leaf(p));
        let mut fakes = Vec::new();
        for i in start..=end {
            let noise = self.noise(rng, i, lengths[i]);
            let up = prev_v.map(|p| {
                let map = self.maps.get(lengths[i - 1], lengths[i]);
                tape.time_map(p, map)
            });
            let z = tape.leaf(noise);
            let ow = self.overwrite(pool_index, k, i);
            let out = generator_level(tape, &self.gspec, &self.gmasks, &gparams[i - start], up, z, ow.as_ref());
            fakes.push(out);
            prev_v = Some(out);
        }
        fakes
    }

    fn overwrite(&self, pool_index: usize, k: usize, level: usize) -> Option<Overwrite> {
        if self.pool.is_empty() {
            None
        } else {
            Some(self.pool[pool_index % self.pool.len()][k][level].clone())
        }
    }

    /// Mean over sequences of the level reconstruction error.
    fn reconstruction(&mut self, tape: &mut Tape, level: usize, gparams: &[Var]) -> Var {
        let n = self.pyramids.len();
        let mut total: Option<Var> = None;
        for k in 0..n {
            let lengths = &self.pyramids[k].lengths;
            let real = self.pyramids[k].levels[level].features().clone();
            let (prev, noise) = if level == 0 {
                (None, broadcast_noise(&self.z_star[k], self.sigma[0], self.width()))
            } else {
                let up = resample_tensor(self.pyramids[k].levels[level - 1].features(), lengths[level]);
                (Some(up), Tensor::zeros(&[self.width(), lengths[level]]))
            };
            let prev = prev.map(|p| tape.leaf(p));
            let z = tape.leaf(noise);
            let ow = self.rec_overwrites.get(k).map(|o| o[level].clone());
            let out = generator_level(tape, &self.gspec, &self.gmasks, gparams, prev, z, ow.as_ref());
            let target = tape.leaf(real);
            let l = l1_mean(tape, out, target);
            total = Some(match total {
                Some(acc) => tape.add(acc, l),
                None => l,
            });
        }
        let total = total.expect("at least one sequence");
        tape.scale(total, 1.0 / n as f64)
    }

    fn train_block(
        &mut self,
        start: usize,
        end: usize,
        rng: &mut ChaCha8Rng,
        sink: &mut dyn FnMut(&Telemetry),
    ) -> Result<(), TrainError> {
        let cfg = self.cfg;
        let block: Vec<usize> = (start..=end).collect();
        let mut gadam: Vec<AdamState> = block
            .iter()
            .map(|&i| AdamState::new(cfg.adam, &self.levels[i].generator.params))
            .collect();
        let mut dadam: Vec<AdamState> = block
            .iter()
            .map(|&i| AdamState::new(cfg.adam, &self.levels[i].discriminator.params))
            .collect();
        let n_seq = self.pyramids.len();
        let iters = cfg.iterations_per_level;
        for it in 0..iters {
            let k = it % n_seq;
            let lengths = self.pyramids[k].lengths.clone();
            let t_finest = *lengths.last().expect("levels");

            // Generator graph for this iteration's fakes.
            let mut tape = Tape::new();
            let gparams: Vec<Vec<Var>> = block
                .iter()
                .map(|&i| self.levels[i].generator.leaves(&mut tape))
                .collect();
            let fakes = self.fake_chain(&mut tape, rng, k, start, end, &gparams, it);

            // Critic updates on detached fakes.
            let mut stats = vec![(0.0, 0.0, 0.0, 0.0); block.len()];
            for _ in 0..cfg.critic_steps {
                for (b, &i) in block.iter().enumerate() {
                    let mut ct = Tape::new();
                    let dparams = self.levels[i].discriminator.leaves(&mut ct);
                    let real = ct.leaf(self.pyramids[k].levels[i].features().clone());
                    let fake = ct.leaf(tape.value(fakes[b]).clone());
                    let mix: f64 = rng.random();
                    let adv = critic_loss(&mut ct, &self.dspec, &self.dmasks, &dparams, real, fake, mix, cfg.lambda_gp)?;
                    stats[b] = (
                        ct.value(adv.critic).item(),
                        ct.value(adv.penalty).item(),
                        ct.value(adv.d_real).item(),
                        ct.value(adv.d_fake).item(),
                    );
                    if !stats[b].0.is_finite() {
                        return Err(TrainError::Diverged {
                            level: i + 1,
                            iteration: it,
                            what: "critic loss",
                        });
                    }
                    let grads = ct.backward(adv.critic, &dparams)?.into_vec();
                    dadam[b].step(&mut self.levels[i].discriminator.params, &grads)?;
                }
            }

            // Generator update on the block's summed objective.
            let mut objective: Option<Var> = None;
            let mut parts = Vec::with_capacity(block.len());
            for (b, &i) in block.iter().enumerate() {
                let dparams = self.levels[i].discriminator.leaves(&mut tape);
                let d_fake = crate::networks::discriminator_level(&mut tape, &self.dspec, &self.dmasks, &dparams, fakes[b]);
                let adv = tape.neg(d_fake);
                let rec = self.reconstruction(&mut tape, i, &gparams[b]);
                let con = if cfg.contact_loss && cfg.lambda_con > 0.0 {
                    contact_loss(&mut tape, self.skel, fakes[b], lengths[i] as f64 / t_finest as f64)
                } else {
                    None
                };
                let mut terms = vec![tape.scale(adv, cfg.lambda_adv), tape.scale(rec, cfg.lambda_rec)];
                if let Some(c) = con {
                    terms.push(tape.scale(c, cfg.lambda_con));
                }
                for term in terms {
                    objective = Some(match objective {
                        Some(acc) => tape.add(acc, term),
                        None => term,
                    });
                }
                let con_value = con.map_or(0.0, |c| tape.value(c).item());
                parts.push((tape.value(adv).item(), tape.value(rec).item(), con_value));
            }
            let objective = objective.expect("non-empty block");
            if !tape.value(objective).item().is_finite() {
                return Err(TrainError::Diverged {
                    level: end + 1,
                    iteration: it,
                    what: "generator objective",
                });
            }
            let flat: Vec<Var> = gparams.iter().flatten().copied().collect();
            let grads = tape.backward(objective, &flat)?.into_vec();
            let mut offset = 0;
            for (b, &i) in block.iter().enumerate() {
                let n = self.levels[i].generator.params.len();
                gadam[b].step(&mut self.levels[i].generator.params, &grads[offset..offset + n])?;
                offset += n;
            }

            if it % cfg.telemetry_every == 0 || it + 1 == iters {
                for (b, &i) in block.iter().enumerate() {
                    let (critic, penalty, d_real, d_fake) = stats[b];
                    let (adversarial, reconstruction, contact) = parts[b];
                    sink(&Telemetry {
                        level: i + 1,
                        iteration: it,
                        critic,
                        penalty,
                        d_real,
                        d_fake,
                        adversarial,
                        reconstruction,
                        contact,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_inputs(cfg: &TrainConfig, skel: &Skeleton, motions: &[Motion]) -> Result<(), TrainError> {
    cfg.validate()?;
    if motions.is_empty() {
        return Err(TrainError::Config("no training motion".into()));
    }
    for m in motions {
        m.check_skeleton(skel)?;
    }
    Ok(())
}

fn init_trainer<'a>(
    cfg: &'a TrainConfig,
    skel: &'a Skeleton,
    motions: &[Motion],
) -> Result<Trainer<'a>, TrainError> {
    check_inputs(cfg, skel, motions)?;
    let pyramids = motions
        .iter()
        .map(|m| build_pyramid(m, cfg.factor, cfg.levels))
        .collect::<Result<Vec<_>, _>>()?;
    let sigma = (0..cfg.levels)
        .map(|i| pyramids.iter().map(|p| p.sigma[i]).sum::<f64>() / pyramids.len() as f64)
        .collect();
    let graph = MotionGraph::build(skel);
    let gspec = StackSpec::generator(&graph, &cfg.net);
    let dspec = StackSpec::discriminator(&graph, &cfg.net);
    let mut init_rng = rng_stream(cfg.seed, 1);
    let levels = (0..cfg.levels)
        .map(|_| LevelParams {
            generator: gspec.init(&mut init_rng),
            discriminator: dspec.init(&mut init_rng),
        })
        .collect();
    let mut z_rng = rng_stream(cfg.seed, 2);
    let z_star = pyramids.iter().map(|p| normal_track(&mut z_rng, p.lengths[0])).collect();
    Ok(Trainer {
        cfg,
        skel,
        pyramids,
        sigma,
        gmasks: gspec.tape_masks(),
        dmasks: dspec.tape_masks(),
        gspec,
        dspec,
        levels,
        z_star,
        maps: MapCache::default(),
        channels: None,
        rec_overwrites: Vec::new(),
        pool: Vec::new(),
    })
}

fn run(mut tr: Trainer, sink: &mut dyn FnMut(&Telemetry), graph: MotionGraph) -> Result<Model, TrainError> {
    let cfg = tr.cfg;
    let mut rng = rng_stream(cfg.seed, 3);
    let mut start = 0;
    while start < cfg.levels {
        let end = (start + cfg.block_size).min(cfg.levels) - 1;
        tr.train_block(start, end, &mut rng, sink)?;
        start = end + 1;
    }
    let mut model = Model {
        skeleton: tr.skel.clone(),
        graph,
        config: cfg.clone(),
        lengths: tr.pyramids.iter().map(|p| p.lengths.clone()).collect(),
        sigma: tr.sigma.clone(),
        levels: tr.levels,
        z_star: tr.z_star,
        fingerprints: tr.pyramids.iter().map(|p| p.levels.last().expect("levels").fingerprint()).collect(),
        constraint_channels: tr.channels,
        reconstruction_error: Vec::new(),
    };
    model.reconstruction_error = tr
        .pyramids
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let target = p.levels.last().expect("levels").features();
            let ows = tr.rec_overwrites.get(k);
            let out = crate::synthesis::reconstruct_with(&model, k, ows.map(|v| v.as_slice()));
            out.zip_map(target, |a, b| (a - b).abs()).sum() / target.len() as f64
        })
        .collect();
    Ok(model)
}

/// Trains an unconditional model on one or more clips of one skeleton.
pub fn train(
    cfg: &TrainConfig,
    skel: &Skeleton,
    motions: &[Motion],
    sink: &mut dyn FnMut(&Telemetry),
) -> Result<Model, TrainError> {
    let tr = init_trainer(cfg, skel, motions)?;
    run(tr, sink, MotionGraph::build(skel))
}

fn level_overwrites(channels: &[usize], features: &Tensor, lengths: &[usize]) -> LevelOverwrites {
    lengths
        .iter()
        .map(|&t| Overwrite::new(channels, &resample_tensor(features, t)))
        .collect()
}

/// Trains a conditional model whose constrained channels are overwritten
/// at every level input and output. Constraints come from unconditional
/// samples of `base`; reconstruction uses the clip's own channels.
pub fn train_conditional(
    cfg: &TrainConfig,
    skel: &Skeleton,
    motions: &[Motion],
    channels: &[usize],
    base: &Model,
    sink: &mut dyn FnMut(&Telemetry),
) -> Result<Model, TrainError> {
    let mut tr = init_trainer(cfg, skel, motions)?;
    let width = tr.width();
    if channels.is_empty() || channels.iter().any(|&c| c >= width) {
        return Err(TrainError::Config(format!("constraint channels {channels:?} outside [0, {width})")));
    }
    if base.skeleton.fingerprint() != skel.fingerprint() {
        return Err(TrainError::Config("base model was trained on a different skeleton".into()));
    }
    let mut channels = channels.to_vec();
    channels.sort_unstable();
    channels.dedup();
    tr.rec_overwrites = tr
        .pyramids
        .iter()
        .map(|p| level_overwrites(&channels, p.levels.last().expect("levels").features(), &p.lengths))
        .collect();
    let pool_size = cfg.constraint_pool.max(1);
    tr.pool = (0..pool_size)
        .map(|s| {
            tr.pyramids
                .iter()
                .map(|p| {
                    let t = *p.lengths.last().expect("levels");
                    let sample = crate::synthesis::generate(base, t, cfg.seed.wrapping_add(1000 + s as u64))
                        .map_err(|e| TrainError::Config(format!("base sample: {e}")))?;
                    Ok(level_overwrites(&channels, sample.features(), &p.lengths))
                })
                .collect::<Result<Vec<_>, TrainError>>()
        })
        .collect::<Result<_, _>>()?;
    tr.channels = Some(channels);
    run(tr, sink, MotionGraph::build(skel))
}
