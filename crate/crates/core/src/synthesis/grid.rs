//! Conditional generation on a fixed global sampling grid.
//!
//! Level `i` samples finest frame positions `n · s_i` with
//! `s_i = F^{S−1−i}`, independent of the output length. A window of finest
//! frames `[o, N)` therefore touches the same level samples, the same keyed
//! noise and the same downsampled constraints as a one-shot generation
//! over `[0, N)`, and differs from it only where padding or edge clamping
//! reaches, which is within the halved receptive field of either end.

use std::sync::Arc;

use crate::model::Model;
use crate::motion::Motion;
use crate::networks::{broadcast_noise, level_spacings, Overwrite};
use crate::tensor::{SparseMap, Tensor};

use super::{keyed_normal, SynthesisError};

/// Finest frames `[start, end)` of a generation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridWindow {
    pub start: usize,
    pub end: usize,
}

impl GridWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Level sample ranges `[a_i, b_i]` covered by `window`.
fn level_ranges(spacings: &[f64], window: GridWindow) -> Vec<(usize, usize)> {
    let (o, last) = (window.start as f64, (window.end - 1) as f64);
    spacings
        .iter()
        .map(|&s| {
            let mut a = (o / s).ceil() as usize;
            while a > 0 && (a - 1) as f64 * s >= o {
                a -= 1;
            }
            while (a as f64) * s < o {
                a += 1;
            }
            let mut b = (last / s).floor() as usize;
            while ((b + 1) as f64) * s <= last {
                b += 1;
            }
            while b > 0 && (b as f64) * s > last {
                b -= 1;
            }
            (a, b.max(a))
        })
        .collect()
}

/// Lerp point at fractional position `p` inside `[lo_bound, hi_bound]`,
/// expressed relative to `lo_bound`.
fn clamped_point(p: f64, lo_bound: usize, hi_bound: usize) -> (usize, usize, f64) {
    let fl = p.floor();
    if fl < lo_bound as f64 {
        return (0, 0, 0.0);
    }
    let lo = fl as usize;
    if lo >= hi_bound {
        let k = hi_bound - lo_bound;
        return (k, k, 0.0);
    }
    let f = p - fl;
    (lo - lo_bound, lo + 1 - lo_bound, f)
}

fn apply_rows(x: &Tensor, map: &SparseMap) -> Tensor {
    let mut data = Vec::with_capacity(x.rows() * map.out_dim());
    for r in 0..x.rows() {
        data.extend(map.apply(x.row(r)));
    }
    Tensor::matrix(x.rows(), map.out_dim(), data).expect("map shape")
}

/// Per-level noise keyed by global sample index. Samples are drawn on first
/// use with the seed supplied at that moment and kept afterwards.
#[derive(Debug, Clone, Default)]
pub struct NoiseTable {
    /// Per level: global index of the first retained sample and the samples.
    levels: Vec<(usize, Vec<f64>)>,
}

impl NoiseTable {
    pub fn new(levels: usize) -> Self {
        Self {
            levels: vec![(0, Vec::new()); levels],
        }
    }

    /// Samples `[a, b]` of `level`, drawing any missing ones with `seed`.
    pub fn range(&mut self, level: usize, a: usize, b: usize, seed: u64) -> &[f64] {
        let (start, track) = &mut self.levels[level];
        assert!(a >= *start, "noise sample {a} at level {level} was already discarded");
        while *start + track.len() <= b {
            let n = *start + track.len();
            track.push(keyed_normal(seed, level, n));
        }
        &track[a - *start..=b - *start]
    }

    /// Discards samples before global index `keep_from` of `level`.
    pub fn discard_before(&mut self, level: usize, keep_from: usize) {
        let (start, track) = &mut self.levels[level];
        if keep_from > *start {
            let k = (keep_from - *start).min(track.len());
            track.drain(..k);
            *start += k;
        }
    }
}

/// Constraint tracks at the finest rate; column `c` is global frame
/// `offset + c`.
struct Track<'a> {
    channels: &'a [usize],
    offset: usize,
    values: &'a Tensor,
}

/// Runs the level stack over `window`. Constrained channels are overwritten
/// at every level input and output with the tracks linearly sampled at each
/// level's grid positions.
fn run_window(
    model: &Model,
    window: GridWindow,
    track: Option<&Track<'_>>,
    noise: &mut NoiseTable,
    seed: u64,
) -> Tensor {
    let levels = model.num_levels();
    let spacings = level_spacings(model.factor(), levels);
    let ranges = level_ranges(&spacings, window);
    let masks = model.generator_spec().tape_masks();
    let width = model.width();
    let mut prev: Option<Tensor> = None;
    for i in 0..levels {
        let (a, b) = ranges[i];
        let len = b - a + 1;
        let up = prev.as_ref().map(|p| {
            let (pa, pb) = ranges[i - 1];
            let points = (a..=b)
                .map(|n| clamped_point(n as f64 * spacings[i] / spacings[i - 1], pa, pb))
                .collect();
            apply_rows(p, &SparseMap::lerp(pb - pa + 1, points))
        });
        let z = broadcast_noise(noise.range(i, a, b, seed), model.sigma[i], width);
        let overwrite = track.map(|t| {
            let last = window.end - 1;
            let points = (a..=b)
                .map(|n| {
                    let (lo, hi, f) = clamped_point(n as f64 * spacings[i], window.start, last);
                    let base = window.start - t.offset;
                    (lo + base, hi + base, f)
                })
                .collect();
            let sampled = apply_rows(t.values, &SparseMap::lerp(t.values.cols(), points));
            let mut full = Tensor::zeros(&[width, len]);
            for (r, &c) in t.channels.iter().enumerate() {
                full.row_mut(c).copy_from_slice(sampled.row(r));
            }
            Overwrite::new(t.channels, &full)
        });
        prev = Some(model.run_level(i, &masks, up.as_ref(), z, overwrite.as_ref()));
    }
    prev.expect("at least one level")
}

fn check_constraints(model: &Model, rows: usize) -> Result<&[usize], SynthesisError> {
    let channels = model
        .constraint_channels
        .as_deref()
        .ok_or(SynthesisError::NotConditional)?;
    if rows != channels.len() {
        return Err(SynthesisError::Constraints(format!(
            "expected {} constraint rows, got {rows}",
            channels.len()
        )));
    }
    Ok(channels)
}

fn to_motion(model: &Model, x: Tensor) -> Motion {
    Motion::from_features(x, model.skeleton.num_joints(), model.skeleton.num_feet())
        .expect("generator output matches the skeleton")
}

/// Generates finest frames `[0, N)` on the global grid without constraints.
pub fn generate_on_grid(model: &Model, frames: usize, seed: u64) -> Result<Motion, SynthesisError> {
    let min = super::min_length(model);
    if frames < min {
        return Err(SynthesisError::TooShort { got: frames, min });
    }
    let mut noise = NoiseTable::new(model.num_levels());
    let window = GridWindow { start: 0, end: frames };
    Ok(to_motion(model, run_window(model, window, None, &mut noise, seed)))
}

/// One-shot conditional generation. `constraints` is `[|C| × N]` in the
/// order of the model's constraint channels.
pub fn generate_conditional(model: &Model, constraints: &Tensor, seed: u64) -> Result<Motion, SynthesisError> {
    let channels = check_constraints(model, constraints.rows())?;
    let min = super::min_length(model);
    if constraints.cols() < min {
        return Err(SynthesisError::TooShort {
            got: constraints.cols(),
            min,
        });
    }
    let track = Track {
        channels,
        offset: 0,
        values: constraints,
    };
    let mut noise = NoiseTable::new(model.num_levels());
    let window = GridWindow {
        start: 0,
        end: constraints.cols(),
    };
    Ok(to_motion(model, run_window(model, window, Some(&track), &mut noise, seed)))
}

/// Frames released by one streaming step.
#[derive(Debug, Clone)]
pub struct StreamChunk {
    /// Global index of the first frame in `motion`.
    pub start: usize,
    pub motion: Motion,
}

/// Streaming conditional generation: each extension regenerates a window
/// reaching `2r` frames back and releases every frame that is at least `r`
/// frames from the end of the accumulated constraints.
#[derive(Debug, Clone)]
pub struct InteractiveSession {
    model: Arc<Model>,
    /// Retained constraint columns; column 0 is global frame `offset`.
    constraints: Tensor,
    offset: usize,
    total: usize,
    noise: NoiseTable,
    r: usize,
    displayed: usize,
}

impl InteractiveSession {
    pub fn new(model: Arc<Model>) -> Result<Self, SynthesisError> {
        let rows = model
            .constraint_channels
            .as_ref()
            .ok_or(SynthesisError::NotConditional)?
            .len();
        let r = model.halved_receptive_field();
        let levels = model.num_levels();
        Ok(Self {
            model,
            constraints: Tensor::zeros(&[rows, 0]),
            offset: 0,
            total: 0,
            noise: NoiseTable::new(levels),
            r,
            displayed: 0,
        })
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    /// Halved receptive field: frames withheld after every extension.
    pub fn withheld(&self) -> usize {
        self.r
    }

    pub fn displayed(&self) -> usize {
        self.displayed
    }

    /// Constraint frames received so far.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Appends `[|C| × n]` constraint frames and returns the newly final
    /// frames. Noise for new samples is keyed by `seed`.
    pub fn extend(&mut self, new: &Tensor, seed: u64) -> Result<StreamChunk, SynthesisError> {
        check_constraints(&self.model, new.rows())?;
        if new.cols() == 0 {
            return Err(SynthesisError::EmptyExtension);
        }
        self.constraints = Tensor::concat_cols(&[&self.constraints, new]);
        self.total += new.cols();
        let release = self.total.saturating_sub(self.r);
        self.release_until(release, seed)
    }

    /// Releases the withheld tail, ending the stream.
    pub fn finish(&mut self, seed: u64) -> Result<StreamChunk, SynthesisError> {
        self.release_until(self.total, seed)
    }

    fn release_until(&mut self, until: usize, seed: u64) -> Result<StreamChunk, SynthesisError> {
        let start = self.displayed;
        if until <= start {
            let empty = Motion::rest(self.model.skeleton.num_joints(), self.model.skeleton.num_feet(), 0);
            return Ok(StreamChunk { start, motion: empty });
        }
        let o = start.saturating_sub(self.r);
        let window = GridWindow {
            start: o,
            end: self.total,
        };
        let channels = self.model.constraint_channels.clone().expect("conditional model");
        let track = Track {
            channels: &channels,
            offset: self.offset,
            values: &self.constraints,
        };
        let out = run_window(&self.model, window, Some(&track), &mut self.noise, seed);
        let frames = out.slice_cols(start - o, until - o);
        self.displayed = until;

        // The next window starts r frames before the first withheld frame.
        let keep = until.saturating_sub(self.r);
        if keep > self.offset {
            self.constraints = self.constraints.slice_cols(keep - self.offset, self.constraints.cols());
            self.offset = keep;
        }
        let spacings = level_spacings(self.model.factor(), self.model.num_levels());
        let next = level_ranges(
            &spacings,
            GridWindow {
                start: keep,
                end: keep + 1,
            },
        );
        for (i, (a, _)) in next.into_iter().enumerate() {
            self.noise.discard_before(i, a);
        }
        Ok(StreamChunk {
            start,
            motion: to_motion(&self.model, frames),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_window() {
        let s = level_spacings(4.0 / 3.0, 4);
        let r = level_ranges(&s, GridWindow { start: 10, end: 50 });
        for (&(a, b), &sp) in r.iter().zip(&s) {
            assert!(a as f64 * sp >= 10.0);
            assert!(a == 0 || (a - 1) as f64 * sp < 10.0);
            assert!(b as f64 * sp <= 49.0);
            assert!((b + 1) as f64 * sp > 49.0);
        }
        assert_eq!(r[3], (10, 49));
    }

    #[test]
    fn clamped_points() {
        assert_eq!(clamped_point(2.5, 3, 9), (0, 0, 0.0));
        assert_eq!(clamped_point(9.0, 3, 9), (6, 6, 0.0));
        assert_eq!(clamped_point(4.25, 3, 9), (1, 2, 0.25));
    }

    #[test]
    fn noise_table_keeps_first_draw() {
        let mut t = NoiseTable::new(2);
        let first = t.range(1, 0, 4, 11).to_vec();
        let again = t.range(1, 2, 7, 99).to_vec();
        assert_eq!(&first[2..], &again[..3]);
        assert_eq!(again[4], keyed_normal(99, 1, 6));
        t.discard_before(1, 3);
        assert_eq!(t.range(1, 3, 3, 0)[0], first[3]);
    }
}
