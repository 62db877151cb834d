//! Single-clip evaluation: nearest-neighbour window distance, coverage,
//! patched nearest neighbour (global diversity) and local diversity.
//!
//! Every metric compares local joint rotation matrices only; root
//! displacement and contact channels never enter a distance.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{frobenius_sq, Motion, MotionError};

pub const COVERAGE_WINDOW: usize = 30;
pub const PNN_MIN_SEGMENT: usize = 30;
pub const DIVERSITY_WINDOW: usize = 15;
/// Largest query length accepted by [`pnn_bruteforce`].
pub const BRUTEFORCE_MAX_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("{what} has {got} frames, needs at least {need}")]
    TooShort { what: &'static str, got: usize, need: usize },
    #[error("query of {0} frames is too long for exhaustive enumeration")]
    TooLarge(usize),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("motions have different joint counts")]
    JointMismatch,
}

/// Local rotation matrices per frame, the only data the metrics read.
#[derive(Debug, Clone)]
pub struct RotationTrack {
    frames: Vec<Vec<Matrix3<f64>>>,
}

impl RotationTrack {
    pub fn new(m: &Motion) -> Result<Self, MetricsError> {
        Ok(Self {
            frames: m.rotation_matrices()?,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn joints(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// Summed squared Frobenius distance between two frames' joint rotations.
pub fn frame_distance(a: &[Matrix3<f64>], b: &[Matrix3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| frobenius_sq(x, y)).sum()
}

/// `d[a][b]` between every frame of `q` and every frame of `t`.
fn distance_table(q: &RotationTrack, t: &RotationTrack) -> Result<Vec<Vec<f64>>, MetricsError> {
    if q.joints() != t.joints() {
        return Err(MetricsError::JointMismatch);
    }
    Ok(q.frames
        .iter()
        .map(|a| t.frames.iter().map(|b| frame_distance(a, b)).collect())
        .collect())
}

fn need(what: &'static str, got: usize, need: usize) -> Result<(), MetricsError> {
    if got < need {
        Err(MetricsError::TooShort { what, got, need })
    } else {
        Ok(())
    }
}

/// Mean per-frame distance from `q` to its best-matching equal-length window
/// of `t`.
pub fn nn_distance(q: &Motion, t: &Motion) -> Result<f64, MetricsError> {
    let (q, t) = (RotationTrack::new(q)?, RotationTrack::new(t)?);
    need("query", q.len(), 1)?;
    need("reference", t.len(), q.len())?;
    let d = distance_table(&q, &t)?;
    let l = q.len();
    let best = (0..=t.len() - l)
        .map(|k| (0..l).fold(0.0, |acc, m| acc + d[m][k + m]))
        .fold(f64::INFINITY, f64::min);
    Ok(best / l as f64)
}

/// For every length-`len` window of `a`, the smallest summed distance to any
/// length-`len` window of `b`. `d` is `[|a| × |b|]`.
fn window_minima(d: &[Vec<f64>], len: usize) -> Vec<f64> {
    let (la, lb) = (d.len(), d[0].len());
    let mut best = vec![f64::INFINITY; la + 1 - len];
    // Each diagonal `b − a = shift` is scanned once with a running sum.
    for shift in -(la as isize - 1)..lb as isize {
        let a0 = (-shift).max(0) as usize;
        let b0 = shift.max(0) as usize;
        let n = (la - a0).min(lb - b0);
        if n < len {
            continue;
        }
        let diag: Vec<f64> = (0..n).map(|m| d[a0 + m][b0 + m]).collect();
        let mut sum: f64 = diag[..len].iter().sum();
        for start in 0..=n - len {
            if start > 0 {
                sum += diag[start + len - 1] - diag[start - 1];
            }
            let a = a0 + start;
            // Running sums can drift slightly negative; distances cannot.
            best[a] = best[a].min(sum.max(0.0));
        }
    }
    best
}

/// Fraction of `t`'s length-`window` windows within `epsilon` (mean
/// per-frame distance) of some window of `sample`.
pub fn coverage_single(sample: &Motion, t: &Motion, epsilon: f64, window: usize) -> Result<f64, MetricsError> {
    if !(epsilon >= 0.0) || window == 0 {
        return Err(MetricsError::Invalid(format!("epsilon {epsilon}, window {window}")));
    }
    let (q, r) = (RotationTrack::new(sample)?, RotationTrack::new(t)?);
    need("reference", r.len(), window)?;
    need("sample", q.len(), window)?;
    let d = distance_table(&r, &q)?;
    let minima = window_minima(&d, window);
    let covered = minima.iter().filter(|&&m| m / (window as f64) < epsilon).count();
    Ok(covered as f64 / minima.len() as f64)
}

/// Per-sample coverage and its mean.
pub fn coverage(samples: &[Motion], t: &Motion, epsilon: f64, window: usize) -> Result<(f64, Vec<f64>), MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Invalid("no samples".into()));
    }
    let per = samples
        .iter()
        .map(|s| coverage_single(s, t, epsilon, window))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}

/// Mean over `q`'s length-`window` windows of their nearest-neighbour
/// distance into `t`.
pub fn local_diversity(q: &Motion, t: &Motion, window: usize) -> Result<f64, MetricsError> {
    if window == 0 {
        return Err(MetricsError::Invalid("window must be positive".into()));
    }
    let (a, b) = (RotationTrack::new(q)?, RotationTrack::new(t)?);
    need("query", a.len(), window)?;
    need("reference", b.len(), window)?;
    let d = distance_table(&a, &b)?;
    let minima = window_minima(&d, window);
    Ok(minima.iter().map(|m| m / window as f64).sum::<f64>() / minima.len() as f64)
}

/// One matched piece of a patched-nearest-neighbour segmentation: query
/// frames `[start, end)` copy reference frames `[source, source + end − start)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnnResult {
    /// Optimal total distance divided by the query length.
    pub cost: f64,
    /// Optimal total distance.
    pub total: f64,
    /// Reference frame matched to each query frame.
    pub labels: Vec<usize>,
    pub segments: Vec<Segment>,
    /// Segment extensions evaluated by the dynamic program.
    pub work: u64,
}

fn segment_sum(d: &[Vec<f64>], s: &Segment) -> f64 {
    (0..s.end - s.start).fold(0.0, |acc, m| acc + d[s.start + m][s.source + m])
}

/// Total of segment sums in order, as the dynamic program accumulates it.
fn segmentation_total(d: &[Vec<f64>], segments: &[Segment]) -> f64 {
    segments.iter().fold(0.0, |acc, s| acc + segment_sum(d, s))
}

fn pnn_table(d: &[Vec<f64>], t_len: usize, min_seg: usize) -> Option<PnnResult> {
    let lq = d.len();
    let mut best = vec![f64::INFINITY; lq + 1];
    let mut back: Vec<Option<Segment>> = vec![None; lq + 1];
    best[0] = 0.0;
    let mut work = 0u64;
    for j in 0..lq {
        if !best[j].is_finite() {
            continue;
        }
        for k in 0..t_len {
            let mut sum = 0.0;
            let max_len = (lq - j).min(t_len - k);
            for len in 1..=max_len {
                sum += d[j + len - 1][k + len - 1];
                work += 1;
                if len >= min_seg {
                    let i = j + len;
                    let cand = best[j] + sum;
                    if cand < best[i] {
                        best[i] = cand;
                        back[i] = Some(Segment {
                            start: j,
                            end: i,
                            source: k,
                        });
                    }
                }
            }
        }
    }
    let mut segments = Vec::new();
    let mut i = lq;
    while i > 0 {
        let s = back[i]?;
        segments.push(s);
        i = s.start;
    }
    segments.reverse();
    let labels = segments
        .iter()
        .flat_map(|s| (0..s.end - s.start).map(move |m| s.source + m))
        .collect();
    Some(PnnResult {
        cost: best[lq] / lq as f64,
        total: best[lq],
        labels,
        segments,
        work,
    })
}

fn infeasible(lq: usize, lt: usize, min_seg: usize) -> MetricsError {
    MetricsError::Invalid(format!(
        "{lq} query frames cannot be split into copies of {min_seg} to {lt} frames"
    ))
}

/// Patched nearest neighbour: the cheapest way to explain `q` as a
/// sequence of contiguous copies from `t`, each at least `min_seg` frames.
pub fn pnn(q: &Motion, t: &Motion, min_seg: usize) -> Result<PnnResult, MetricsError> {
    if min_seg == 0 {
        return Err(MetricsError::Invalid("minimum segment length must be positive".into()));
    }
    let (a, b) = (RotationTrack::new(q)?, RotationTrack::new(t)?);
    need("query", a.len(), min_seg)?;
    need("reference", b.len(), min_seg)?;
    let d = distance_table(&a, &b)?;
    pnn_table(&d, b.len(), min_seg).ok_or_else(|| infeasible(a.len(), b.len(), min_seg))
}

/// Re-scores a segmentation exactly as the dynamic program sums it.
pub fn pnn_rescore(q: &Motion, t: &Motion, segments: &[Segment]) -> Result<f64, MetricsError> {
    let (a, b) = (RotationTrack::new(q)?, RotationTrack::new(t)?);
    let d = distance_table(&a, &b)?;
    let mut at = 0;
    for s in segments {
        if s.start != at || s.end <= s.start || s.end > a.len() || s.source + (s.end - s.start) > b.len() {
            return Err(MetricsError::Invalid(format!("segment {s:?} does not tile the query")));
        }
        at = s.end;
    }
    if at != a.len() {
        return Err(MetricsError::Invalid("segments do not cover the query".into()));
    }
    Ok(segmentation_total(&d, segments) / a.len() as f64)
}

/// Exhaustive minimum over every segmentation of `q`.
pub fn pnn_bruteforce(q: &Motion, t: &Motion, min_seg: usize) -> Result<f64, MetricsError> {
    if min_seg == 0 {
        return Err(MetricsError::Invalid("minimum segment length must be positive".into()));
    }
    let (a, b) = (RotationTrack::new(q)?, RotationTrack::new(t)?);
    if a.len() > BRUTEFORCE_MAX_LEN {
        return Err(MetricsError::TooLarge(a.len()));
    }
    need("query", a.len(), min_seg)?;
    need("reference", b.len(), min_seg)?;
    let d = distance_table(&a, &b)?;

    // Enumerate every composition of the query length into parts ≥ min_seg.
    fn parts(rest: usize, min_seg: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for len in min_seg..=rest {
            cur.push(len);
            parts(rest - len, min_seg, cur, out);
            cur.pop();
        }
    }
    let mut compositions = Vec::new();
    parts(a.len(), min_seg, &mut Vec::new(), &mut compositions);
    let mut best = f64::INFINITY;
    for comp in compositions {
        if comp.iter().any(|&len| len > b.len()) {
            continue;
        }
        // Segments are independent given the split, so each one takes its
        // own cheapest source window.
        let mut start = 0;
        let mut total = 0.0;
        for &len in &comp {
            let cheapest = (0..=b.len() - len)
                .map(|source| {
                    segment_sum(
                        &d,
                        &Segment {
                            start,
                            end: start + len,
                            source,
                        },
                    )
                })
                .fold(f64::INFINITY, f64::min);
            total += cheapest;
            start += len;
        }
        best = best.min(total);
    }
    if best.is_infinite() {
        return Err(infeasible(a.len(), b.len(), min_seg));
    }
    Ok(best / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Coverage threshold; `None` uses 0.1 × joint count.
    pub epsilon: Option<f64>,
    pub coverage_window: usize,
    pub pnn_min_segment: usize,
    pub diversity_window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            coverage_window: COVERAGE_WINDOW,
            pnn_min_segment: PNN_MIN_SEGMENT,
            diversity_window: DIVERSITY_WINDOW,
        }
    }
}

/// Default coverage threshold for `joints` joints.
pub fn default_epsilon(joints: usize) -> f64 {
    0.1 * joints as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub coverage: f64,
    pub coverage_per_sample: Vec<f64>,
    /// Mean patched-nearest-neighbour cost over samples.
    pub pnn: f64,
    pub local_diversity: f64,
    pub epsilon: f64,
    pub coverage_window: usize,
    pub pnn_min_segment: usize,
    pub diversity_window: usize,
    pub samples: usize,
    /// Seed the samples were drawn with, when known.
    pub seed: Option<u64>,
}

/// Full report for `samples` against the reference clip `t`.
pub fn evaluate(samples: &[Motion], t: &Motion, cfg: &MetricsConfig, seed: Option<u64>) -> Result<MetricsReport, MetricsError> {
    let epsilon = cfg.epsilon.unwrap_or_else(|| default_epsilon(t.num_joints()));
    let (cov, per) = coverage(samples, t, epsilon, cfg.coverage_window)?;
    let n = samples.len() as f64;
    let mut pnn_sum = 0.0;
    let mut div_sum = 0.0;
    for s in samples {
        pnn_sum += pnn(s, t, cfg.pnn_min_segment)?.cost;
        div_sum += local_diversity(s, t, cfg.diversity_window)?;
    }
    Ok(MetricsReport {
        coverage: cov,
        coverage_per_sample: per,
        pnn: pnn_sum / n,
        local_diversity: div_sum / n,
        epsilon,
        coverage_window: cfg.coverage_window,
        pnn_min_segment: cfg.pnn_min_segment,
        diversity_window: cfg.diversity_window,
        samples: samples.len(),
        seed,
    })
}
